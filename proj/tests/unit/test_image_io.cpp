#include <gtest/gtest.h>

#include <fstream>

#include "dign/image_io.hpp"
#include "dign/rng.hpp"
#include "oracles.hpp"

using namespace dign;

namespace {

Image8 random_image(std::size_t w, std::size_t h, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Image8 img{w, h, c, std::vector<std::uint8_t>(w * h * c)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST(ImageIo, PngRoundTrip) {
  const auto dir = oracle::temp_dir("png_rt");
  for (std::size_t c : {1, 3}) {
    const auto img = random_image(17, 9, c, c);
    write_png(dir + "/i.png", img);
    EXPECT_EQ(read_image(dir + "/i.png"), img);
  }
}

TEST(ImageIo, NetpbmFormats) {
  const auto dir = oracle::temp_dir("pnm");
  const auto rgb = random_image(5, 4, 3, 7);
  {
    std::ofstream out(dir + "/a.ppm", std::ios::binary);
    out << "P6\n# comment\n5 4\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.pixels.data()), rgb.pixels.size());
  }
  EXPECT_EQ(read_image(dir + "/a.ppm"), rgb);
  const auto gray = random_image(3, 2, 1, 8);
  {
    std::ofstream out(dir + "/b.pgm", std::ios::binary);
    out << "P5 3 2 255\n";
    out.write(reinterpret_cast<const char*>(gray.pixels.data()), gray.pixels.size());
  }
  EXPECT_EQ(read_image(dir + "/b.pgm"), gray);
  {
    std::ofstream out(dir + "/c.ppm", std::ios::binary);
    out << "P6 5 4 255\nabc";
  }
  EXPECT_THROW(read_image(dir + "/c.ppm"), ParseError);
  {
    std::ofstream out(dir + "/d.txt", std::ios::binary);
    out << "not an image";
  }
  EXPECT_THROW(read_image(dir + "/d.txt"), ParseError);
  EXPECT_THROW(read_image(dir + "/missing.png"), IoError);
}

TEST(ImageIo, TensorConversion) {
  const auto rgb = random_image(6, 5, 3, 9);
  const auto t = image_to_tensor<double>(rgb);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 5, 6}));
  EXPECT_DOUBLE_EQ(t.at(0, 2, 4, 1), rgb.at(1, 4, 2) / 255.0);
  EXPECT_EQ(tensor_to_image(t), rgb);
  const auto gray = random_image(6, 5, 1, 10);
  const auto g3 = image_to_tensor<float>(gray);
  EXPECT_EQ(g3.shape().c, 3u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(g3.at(0, c, 3, 2), gray.at(2, 3, 0) / 255.0f);
  EXPECT_EQ(tensor_to_image(image_to_tensor<float>(gray, 1)), gray);
  auto out_of_range = Tensor<double>::from_data({1, 1, 1, 2}, {-0.5, 1.5});
  EXPECT_EQ(tensor_to_image(out_of_range).pixels, (std::vector<std::uint8_t>{0, 255}));
}

TEST(ImageIo, BilinearResize) {
  auto x = oracle::random({1, 2, 8, 6}, 11, 0, 1);
  const auto same = resize_bilinear(x, 8, 6);
  EXPECT_EQ(oracle::max_abs_diff(same.data(), x.data()), 0.0);
  const auto half = resize_bilinear(x, 4, 3);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t xx = 0; xx < 3; ++xx) {
        const double avg = (x.at(0, c, 2 * y, 2 * xx) + x.at(0, c, 2 * y, 2 * xx + 1) + x.at(0, c, 2 * y + 1, 2 * xx) +
                            x.at(0, c, 2 * y + 1, 2 * xx + 1)) / 4;
        EXPECT_NEAR(half.at(0, c, y, xx), avg, 1e-12);
      }
  const auto c = resize_bilinear(Tensor<double>::full({1, 3, 5, 7}, 0.3), 13, 4);
  for (double v : c.data()) EXPECT_NEAR(v, 0.3, 1e-15);
  EXPECT_THROW(resize_bilinear(x, 0, 3), ShapeError);
}
