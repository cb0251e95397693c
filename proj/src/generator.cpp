#include "dign/generator.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <sstream>

#include "dign/ops.hpp"
#include "dign/rng.hpp"
#include "dign/serialize.hpp"

namespace dign {

std::size_t ChannelScale::apply(std::size_t channels) const {
  return std::max<std::size_t>(1, channels * num / den);
}

std::string ChannelScale::str() const { return std::to_string(num) + "/" + std::to_string(den); }

ChannelScale ChannelScale::parse(const std::string& text) {
  ChannelScale s;
  try {
    const auto slash = text.find('/');
    std::size_t used = 0;
    if (slash == std::string::npos) {
      s.num = std::stoul(text, &used);
      if (used != text.size()) throw ParseError("");
    } else {
      s.num = std::stoul(text.substr(0, slash), &used);
      if (used != slash) throw ParseError("");
      const std::string d = text.substr(slash + 1);
      s.den = std::stoul(d, &used);
      if (used != d.size()) throw ParseError("");
    }
  } catch (const std::exception&) {
    throw ParseError("bad channel scale '" + text + "', expected N or N/D");
  }
  if (s.num == 0 || s.den == 0) throw ParseError("channel scale must be positive: '" + text + "'");
  return s;
}

namespace {

constexpr std::size_t kEncoderBase[] = {64, 128, 256, 512, 512, 512, 512, 512};
constexpr std::size_t kEncoderStride[] = {2, 2, 2, 1, 1, 2, 2, 2};
constexpr std::size_t kDecoderBase[] = {512, 512, 512, 512, 256, 128, 64};
constexpr std::size_t kMinInceptionChannels = 8;

std::size_t strided_extent(std::size_t extent, std::size_t stride) { return (extent - 1) / stride + 1; }

bool is_inception_slot(std::size_t i) { return i >= 1 && i + 1 < GeneratorConfig::kLayersPerHalf; }

}  // namespace

GeneratorConfig GeneratorConfig::standard(std::size_t resolution, ChannelScale scale) {
  if (resolution == 0 || resolution % 16 != 0) {
    throw ConfigError("input resolution " + std::to_string(resolution) + " is not a positive multiple of 16");
  }
  GeneratorConfig cfg;
  cfg.input_resolution = resolution;
  cfg.channel_scale = scale;

  std::vector<std::size_t> enc_out(kLayersPerHalf), enc_spatial(kLayersPerHalf + 1);
  enc_spatial[0] = resolution;
  std::size_t in = kImageChannels;
  for (std::size_t i = 0; i < kLayersPerHalf; ++i) {
    LayerEntry e;
    const std::size_t prev = enc_spatial[i];
    e.stride = (kEncoderStride[i] == 2 && prev % 2 == 0) ? 2 : 1;
    e.out_channels = scale.apply(kEncoderBase[i]);
    e.activation = Activation::relu();
    if (is_inception_slot(i)) {
      e.kind = LayerEntry::Kind::kInception;
      e.out_channels = std::max(e.out_channels, kMinInceptionChannels);
      e.branches = InceptionSpec::standard(in, e.out_channels, e.stride, e.activation).branches;
    } else {
      e.kernel = i == 0 ? 7 : 3;
    }
    e.expected_spatial = strided_extent(prev, e.stride);
    enc_spatial[i + 1] = e.expected_spatial;
    enc_out[i] = e.out_channels;
    in = e.out_channels;
    cfg.encoder.push_back(e);
  }

  std::size_t prev_spatial = enc_spatial[kLayersPerHalf];
  std::size_t prev_channels = enc_out.back();
  for (std::size_t d = 0; d < kLayersPerHalf; ++d) {
    LayerEntry e;
    e.skip = kLayersPerHalf - 1 - d;  // encoder layer index, 0 = input image
    const std::size_t skip_spatial = enc_spatial[e.skip];
    const std::size_t skip_channels = e.skip == 0 ? kImageChannels : enc_out[e.skip - 1];
    e.upsample = skip_spatial == 2 * prev_spatial;
    e.expected_spatial = skip_spatial;
    e.activation = Activation::leaky_relu(0.2);
    const std::size_t cin = prev_channels + skip_channels;
    if (d + 1 == kLayersPerHalf) {
      e.out_channels = kImageChannels;
      e.activation = Activation::none();
      e.batch_norm = false;
      e.kernel = 3;
    } else if (is_inception_slot(d)) {
      e.kind = LayerEntry::Kind::kInception;
      e.out_channels = std::max(scale.apply(kDecoderBase[d]), kMinInceptionChannels);
      e.branches = InceptionSpec::standard(cin, e.out_channels, 1, e.activation).branches;
    } else {
      e.out_channels = scale.apply(kDecoderBase[d]);
      e.kernel = 3;
    }
    prev_spatial = e.expected_spatial;
    prev_channels = e.out_channels;
    cfg.decoder.push_back(e);
  }
  return cfg;
}

std::vector<std::size_t> GeneratorConfig::in_channels() const {
  std::vector<std::size_t> out;
  std::size_t in = kImageChannels;
  for (const auto& e : encoder) {
    out.push_back(in);
    in = e.out_channels;
  }
  for (const auto& d : decoder) {
    const std::size_t skip_channels =
        d.skip == 0 ? kImageChannels : (d.skip <= encoder.size() ? encoder[d.skip - 1].out_channels : 0);
    out.push_back(in + skip_channels);
    in = d.out_channels;
  }
  return out;
}

std::vector<std::size_t> spatial_trace(const GeneratorConfig& config) {
  std::vector<std::size_t> trace;
  std::size_t s = config.input_resolution;
  for (const auto& e : config.encoder) {
    s = strided_extent(s, e.stride);
    trace.push_back(s);
  }
  for (const auto& d : config.decoder) {
    s = d.upsample ? 2 * s : s;
    trace.push_back(s);
  }
  return trace;
}

void GeneratorConfig::validate() const {
  if (encoder.size() != kLayersPerHalf || decoder.size() != kLayersPerHalf) {
    throw ConfigError("generator needs exactly 8 encoder and 8 decoder layers, got " +
                      std::to_string(encoder.size()) + " + " + std::to_string(decoder.size()));
  }
  if (input_resolution == 0 || input_resolution % 2 != 0) {
    throw ConfigError("input resolution must be a positive even number");
  }
  const auto channels = in_channels();
  std::vector<std::size_t> enc_spatial{input_resolution};
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const LayerEntry& e = encoder[i];
    const std::string where = "encoder layer " + std::to_string(i + 1) + ": ";
    if (e.stride == 0 || e.out_channels == 0) throw ConfigError(where + "stride and channels must be positive");
    const std::size_t s = strided_extent(enc_spatial.back(), e.stride);
    if (e.expected_spatial != s) {
      throw ConfigError(where + "extent " + std::to_string(s) + " differs from expected " +
                        std::to_string(e.expected_spatial));
    }
    enc_spatial.push_back(s);
  }
  std::size_t prev = enc_spatial.back();
  for (std::size_t d = 0; d < decoder.size(); ++d) {
    const LayerEntry& e = decoder[d];
    const std::string where = "decoder layer " + std::to_string(d + 1) + ": ";
    if (e.skip >= kLayersPerHalf) throw ConfigError(where + "skip source out of range");
    const std::size_t arriving = e.upsample ? 2 * prev : prev;
    if (arriving != enc_spatial[e.skip]) {
      throw ConfigError(where + "spatial mismatch at skip junction: " + std::to_string(arriving) + " vs " +
                        std::to_string(enc_spatial[e.skip]) + " from encoder layer " + std::to_string(e.skip));
    }
    if (e.expected_spatial != arriving) {
      throw ConfigError(where + "extent " + std::to_string(arriving) + " differs from expected " +
                        std::to_string(e.expected_spatial));
    }
    if (e.stride != 1) throw ConfigError(where + "decoder layers run at stride 1");
    prev = arriving;
  }
  const LayerEntry& last = decoder.back();
  if (last.out_channels != kImageChannels || prev != input_resolution) {
    throw ConfigError("decoder layer 8: output must have 3 channels at the input resolution");
  }
  const std::vector<const LayerEntry*> all = [&] {
    std::vector<const LayerEntry*> v;
    for (const auto& e : encoder) v.push_back(&e);
    for (const auto& e : decoder) v.push_back(&e);
    return v;
  }();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const LayerEntry& e = *all[i];
    const std::string where = (i < 8 ? "encoder layer " : "decoder layer ") + std::to_string(i % 8 + 1) + ": ";
    if (e.kind == LayerEntry::Kind::kInception) {
      InceptionSpec spec{e.branches, e.stride, e.activation, e.batch_norm, norm_mode};
      try {
        spec.validate();
      } catch (const ConfigError& err) {
        throw ConfigError(where + err.what());
      }
      if (spec.out_channels() != e.out_channels) {
        throw ConfigError(where + "branch widths sum to " + std::to_string(spec.out_channels()) + ", expected " +
                          std::to_string(e.out_channels));
      }
    } else if (e.kernel % 2 == 0) {
      throw ConfigError(where + "kernel must be odd");
    }
    if (channels[i] == 0) throw ConfigError(where + "no input channels");
  }
}

std::string GeneratorConfig::canonical_text() const {
  std::ostringstream os;
  os << "resolution = " << input_resolution << '\n';
  os << "channel_scale = " << channel_scale.str() << '\n';
  os << "norm_mode = " << to_string(norm_mode) << '\n';
  auto line = [&](const std::string& key, const LayerEntry& e, bool decoder_entry) {
    os << key << " = " << (e.kind == LayerEntry::Kind::kInception ? "inception" : "plain");
    if (e.kind == LayerEntry::Kind::kPlain) os << " k=" << e.kernel;
    if (decoder_entry) {
      os << " up=" << (e.upsample ? 1 : 0) << " skip=" << e.skip;
    } else {
      os << " s=" << e.stride;
    }
    os << " out=" << e.out_channels << " sp=" << e.expected_spatial << " act=" << e.activation.str()
       << " bn=" << (e.batch_norm ? 1 : 0);
    if (e.kind == LayerEntry::Kind::kInception) {
      InceptionSpec spec;
      spec.branches = e.branches;
      os << " branches=" << spec.branches_str();
    }
    os << '\n';
  };
  for (std::size_t i = 0; i < encoder.size(); ++i) line("enc." + std::to_string(i + 1), encoder[i], false);
  for (std::size_t i = 0; i < decoder.size(); ++i) line("dec." + std::to_string(i + 1), decoder[i], true);
  return os.str();
}

GeneratorConfig GeneratorConfig::parse(const std::string& text) {
  GeneratorConfig cfg;
  cfg.encoder.clear();
  cfg.decoder.clear();
  std::map<std::size_t, LayerEntry> enc, dec;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  auto to_size = [](const std::string& v, const std::string& what) -> std::size_t {
    std::size_t used = 0;
    try {
      const std::size_t out = std::stoul(v, &used);
      if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ParseError("bad value '" + v + "' for " + what);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    std::string line = raw.substr(0, hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "resolution") {
      cfg.input_resolution = to_size(value, key);
    } else if (key == "channel_scale") {
      cfg.channel_scale = ChannelScale::parse(value);
    } else if (key == "norm_mode") {
      cfg.norm_mode = parse_norm_mode(value);
    } else if (key.rfind("enc.", 0) == 0 || key.rfind("dec.", 0) == 0) {
      const bool is_dec = key[0] == 'd';
      const std::size_t idx = to_size(key.substr(4), key);
      if (idx < 1 || idx > kLayersPerHalf) throw ParseError("layer index out of range in '" + key + "'");
      LayerEntry e;
      std::istringstream tokens(value);
      std::string kind;
      tokens >> kind;
      if (kind == "plain") {
        e.kind = LayerEntry::Kind::kPlain;
      } else if (kind == "inception") {
        e.kind = LayerEntry::Kind::kInception;
      } else {
        throw ParseError("unknown layer kind '" + kind + "' for " + key);
      }
      std::string tok;
      while (tokens >> tok) {
        const auto teq = tok.find('=');
        if (teq == std::string::npos) throw ParseError("bad field '" + tok + "' for " + key);
        const std::string f = tok.substr(0, teq), v = tok.substr(teq + 1);
        if (f == "k") e.kernel = to_size(v, key + ".k");
        else if (f == "s") e.stride = to_size(v, key + ".s");
        else if (f == "up") e.upsample = to_size(v, key + ".up") != 0;
        else if (f == "skip") e.skip = to_size(v, key + ".skip");
        else if (f == "out") e.out_channels = to_size(v, key + ".out");
        else if (f == "sp") e.expected_spatial = to_size(v, key + ".sp");
        else if (f == "act") e.activation = Activation::parse(v);
        else if (f == "bn") e.batch_norm = to_size(v, key + ".bn") != 0;
        else if (f == "branches") e.branches = InceptionSpec::parse_branches(v);
        else throw ParseError("unknown field '" + f + "' for " + key);
      }
      (is_dec ? dec : enc)[idx] = e;
    } else {
      throw ParseError("unknown generator key '" + key + "'");
    }
  }
  for (std::size_t i = 1; i <= kLayersPerHalf; ++i) {
    if (!enc.count(i)) throw ParseError("missing enc." + std::to_string(i));
    if (!dec.count(i)) throw ParseError("missing dec." + std::to_string(i));
    cfg.encoder.push_back(enc[i]);
    cfg.decoder.push_back(dec[i]);
  }
  return cfg;
}

std::uint64_t GeneratorConfig::digest() const { return fnv1a64(canonical_text()); }

template <typename T>
PlainLayer<T>::PlainLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                          Activation act, bool batch_norm, NormMode norm_mode, std::uint64_t seed)
    : act_(act), norm_mode_(norm_mode) {
  const std::size_t half = kernel / 2;
  conv_ = make_conv<T>(in_channels, out_channels, {kernel, kernel}, {stride, stride}, {half, half}, !batch_norm,
                       seed);
  if (batch_norm) bn_ = BatchNormState<T>::create(out_channels);
}

template <typename T>
MaskedActivation<T> PlainLayer<T>::forward(const MaskedActivation<T>& input, Mode mode) {
  MaskedActivation<T> out = partial_conv2d(input, conv_, norm_mode_);
  if (bn_) out.features = batch_norm(out.features, *bn_, mode);
  out.features = activation(out.features, act_);
  return out;
}

template <typename T>
void PlainLayer<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  collect_conv(prefix + ".conv", conv_, out);
  if (bn_) collect_bn(prefix + ".bn", *bn_, out);
}

template <typename T>
Generator<T>::Generator(GeneratorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto channels = config_.in_channels();
  for (std::size_t i = 0; i < 2 * GeneratorConfig::kLayersPerHalf; ++i) {
    const bool is_dec = i >= GeneratorConfig::kLayersPerHalf;
    const LayerEntry& e = is_dec ? config_.decoder[i - 8] : config_.encoder[i];
    const std::uint64_t layer_seed = derive_seed(seed, {is_dec ? 2u : 1u, i % 8});
    if (e.kind == LayerEntry::Kind::kInception) {
      InceptionSpec spec{e.branches, e.stride, e.activation, e.batch_norm, config_.norm_mode};
      layers_.push_back(std::make_unique<InceptionLayer<T>>(spec, channels[i], layer_seed));
    } else {
      layers_.push_back(std::make_unique<PlainLayer<T>>(channels[i], e.out_channels, e.kernel, e.stride,
                                                        e.activation, e.batch_norm, config_.norm_mode, layer_seed));
    }
  }
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& image, const Tensor<T>& mask, Mode mode,
                                std::vector<MaskedActivation<T>>* trace,
                                std::vector<MaskedActivation<T>>* inputs) {
  const Shape s = image.shape();
  const std::size_t r = config_.input_resolution;
  if (s.c != GeneratorConfig::kImageChannels || s.h != r || s.w != r) {
    throw ShapeError("generator expects (N,3," + std::to_string(r) + "," + std::to_string(r) + ") input, got " +
                     s.str());
  }
  const Shape ms = mask.shape();
  if (ms != Shape{s.n, 1, s.h, s.w}) throw ShapeError("generator mask " + ms.str() + " does not match " + s.str());
  require_binary(mask, "generator");

  std::vector<MaskedActivation<T>> enc;
  enc.push_back({apply_mask(image, mask), mask});
  for (std::size_t i = 0; i < GeneratorConfig::kLayersPerHalf; ++i) {
    if (inputs) inputs->push_back(enc.back());
    enc.push_back(layers_[i]->forward(enc.back(), mode));
    if (trace) trace->push_back(enc.back());
  }
  MaskedActivation<T> x = enc.back();
  for (std::size_t d = 0; d < GeneratorConfig::kLayersPerHalf; ++d) {
    const LayerEntry& e = config_.decoder[d];
    if (e.upsample) {
      x.features = upsample_nearest(x.features, 2);
      x.mask = upsample_nearest(x.mask, 2);
    }
    const MaskedActivation<T>& skip = enc[e.skip];
    // Single-channel masks of the two halves merge by union.
    std::vector<T> merged(skip.mask.data().begin(), skip.mask.data().end());
    const auto xm = x.mask.data();
    for (std::size_t i = 0; i < merged.size(); ++i) merged[i] = std::max(merged[i], xm[i]);
    MaskedActivation<T> joined{concat_channels<T>({x.features, skip.features}),
                               Tensor<T>::from_data(skip.mask.shape(), std::move(merged))};
    if (inputs) inputs->push_back(joined);
    x = layers_[GeneratorConfig::kLayersPerHalf + d]->forward(joined, mode);
    if (trace) trace->push_back(x);
  }
  return x.features;
}

template <typename T>
Block<T>& Generator<T>::layer(std::size_t index) {
  if (index < 1 || index > layers_.size()) throw ContractError("layer index out of range");
  return *layers_[index - 1];
}

template <typename T>
InceptionLayer<T>* Generator<T>::inception_at(std::size_t index) {
  if (index < 1 || index > layers_.size()) return nullptr;
  return dynamic_cast<InceptionLayer<T>*>(layers_[index - 1].get());
}

template <typename T>
std::vector<std::size_t> Generator<T>::inception_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (dynamic_cast<const InceptionLayer<T>*>(layers_[i].get())) out.push_back(i + 1);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Generator<T>::tensors() {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = (i < 8 ? "enc" : "dec") + std::to_string(i % 8 + 1);
    layers_[i]->collect(prefix, out);
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Generator<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  for (auto& t : tensors())
    if (t.trainable) out.push_back(t);
  return out;
}

template <typename T>
std::uint64_t Generator<T>::weight_digest() {
  std::string bytes;
  for (const auto& t : tensors()) {
    bytes += t.name;
    const auto d = t.tensor.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(T));
  }
  return fnv1a64(bytes);
}

template <typename T>
Tensor<T> composite(const Tensor<T>& image, const Tensor<T>& output, const Tensor<T>& mask) {
  return mask_select(mask, image, output);
}

template <typename T>
Tensor<T> inpaint(Generator<T>& gen, const Tensor<T>& image, const Tensor<T>& mask) {
  NoGradGuard<T> no_grad;
  const Tensor<T> raw = gen.forward(image, mask, Mode::kEval);
  return clamp(composite(image, raw, mask), T(0), T(1));
}

template class PlainLayer<float>;
template class PlainLayer<double>;
template class Generator<float>;
template class Generator<double>;
template Tensor<float> inpaint<float>(Generator<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> inpaint<double>(Generator<double>&, const Tensor<double>&, const Tensor<double>&);
template Tensor<float> composite<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> composite<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace dign
