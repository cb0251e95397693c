#include "dign/inception.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "dign/rng.hpp"

namespace dign {

std::size_t InceptionSpec::out_channels() const {
  std::size_t total = 0;
  for (const auto& b : branches) total += b.out_channels;
  return total;
}

void InceptionSpec::validate() const {
  if (branches.size() < 2) throw ConfigError("inception spec needs at least two branches");
  if (stride == 0) throw ConfigError("inception stride must be positive");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const BranchSpec& b = branches[i];
    const std::string where = "branch " + std::to_string(i) + ": ";
    if (b.out_channels == 0) throw ConfigError(where + "out_channels must be positive");
    switch (b.kind) {
      case BranchSpec::Kind::kConv:
        if (b.kernel == 0 || b.kernel % 2 == 0) throw ConfigError(where + "conv kernel must be odd");
        break;
      case BranchSpec::Kind::kDecomposedConv:
        if (b.kernel < 3 || b.kernel % 2 == 0) throw ConfigError(where + "decomposed kernel must be odd and >= 3");
        break;
      case BranchSpec::Kind::kPoolThenConv:
        if (b.bottleneck != 0) throw ConfigError(where + "pool branch takes no bottleneck");
        break;
    }
  }
}

InceptionSpec InceptionSpec::standard(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                      Activation act, bool decompose_5x5) {
  if (out_channels < 8) throw ConfigError("standard inception needs at least 8 output channels");
  const std::size_t b1 = out_channels / 4;
  const std::size_t b3 = out_channels / 2;
  const std::size_t b5 = out_channels / 8;
  const std::size_t bp = out_channels - b1 - b3 - b5;
  const std::size_t r3 = std::max<std::size_t>(1, in_channels / 4);
  const std::size_t r5 = std::max<std::size_t>(1, in_channels / 8);
  InceptionSpec spec;
  spec.branches = {BranchSpec::conv(1, b1), BranchSpec::conv(3, b3, r3),
                   decompose_5x5 ? BranchSpec::decomposed(5, b5, r5) : BranchSpec::conv(5, b5, r5),
                   BranchSpec::pool(bp)};
  spec.stride = stride;
  spec.activation = act;
  return spec;
}

std::string InceptionSpec::branches_str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const BranchSpec& b = branches[i];
    std::vector<std::string> fields;
    const char* name = "conv";
    switch (b.kind) {
      case BranchSpec::Kind::kConv:
        fields.push_back("k=" + std::to_string(b.kernel));
        break;
      case BranchSpec::Kind::kDecomposedConv:
        name = "dec";
        fields.push_back("n=" + std::to_string(b.kernel));
        if (b.mid_channels) fields.push_back("mid=" + std::to_string(b.mid_channels));
        break;
      case BranchSpec::Kind::kPoolThenConv:
        name = "pool";
        break;
    }
    if (b.bottleneck) fields.push_back("b=" + std::to_string(b.bottleneck));
    fields.push_back("out=" + std::to_string(b.out_channels));
    os << (i ? ";" : "") << name << '(';
    for (std::size_t f = 0; f < fields.size(); ++f) os << (f ? "," : "") << fields[f];
    os << ')';
  }
  return os.str();
}

std::vector<BranchSpec> InceptionSpec::parse_branches(const std::string& text) {
  std::vector<BranchSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto open = item.find('(');
    if (open == std::string::npos || item.back() != ')') throw ParseError("bad branch '" + item + "'");
    const std::string kind = item.substr(0, open);
    std::map<std::string, std::size_t> fields;
    std::stringstream args(item.substr(open + 1, item.size() - open - 2));
    std::string kv;
    while (std::getline(args, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError("bad branch field '" + kv + "'");
      try {
        fields[kv.substr(0, eq)] = std::stoul(kv.substr(eq + 1));
      } catch (const std::exception&) {
        throw ParseError("bad branch value '" + kv + "'");
      }
    }
    auto take = [&](const std::string& key, std::size_t fallback) {
      auto it = fields.find(key);
      if (it == fields.end()) return fallback;
      const std::size_t v = it->second;
      fields.erase(it);
      return v;
    };
    BranchSpec b;
    if (kind == "conv") {
      b.kind = BranchSpec::Kind::kConv;
      b.kernel = take("k", 0);
    } else if (kind == "dec") {
      b.kind = BranchSpec::Kind::kDecomposedConv;
      b.kernel = take("n", 0);
      b.mid_channels = take("mid", 0);
    } else if (kind == "pool") {
      b.kind = BranchSpec::Kind::kPoolThenConv;
      b.kernel = 1;
    } else {
      throw ParseError("unknown branch kind '" + kind + "'");
    }
    b.bottleneck = take("b", 0);
    b.out_channels = take("out", 0);
    if (!fields.empty()) throw ParseError("unknown branch field '" + fields.begin()->first + "'");
    out.push_back(b);
  }
  return out;
}

ParamCount branch_param_count(const BranchSpec& b, std::size_t in_channels, bool final_bias) {
  ParamCount pc;
  const std::size_t cin = b.bottleneck ? b.bottleneck : in_channels;
  if (b.bottleneck) {
    pc.bottleneck_weights = in_channels * b.bottleneck;
    pc.weights += pc.bottleneck_weights;
    pc.biases += b.bottleneck;
  }
  switch (b.kind) {
    case BranchSpec::Kind::kConv:
    case BranchSpec::Kind::kPoolThenConv:
      pc.weights += cin * b.kernel * b.kernel * b.out_channels;
      break;
    case BranchSpec::Kind::kDecomposedConv:
      pc.weights += cin * b.kernel * b.mid() + b.mid() * b.kernel * b.out_channels;
      pc.biases += b.mid();
      break;
  }
  if (final_bias) pc.biases += b.out_channels;
  return pc;
}

ParamCount param_count(const InceptionSpec& spec, std::size_t in_channels) {
  ParamCount pc;
  for (const BranchSpec& b : spec.branches) {
    const ParamCount one = branch_param_count(b, in_channels, !spec.batch_norm);
    pc.weights += one.weights;
    pc.bottleneck_weights += one.bottleneck_weights;
    pc.biases += one.biases;
  }
  return pc;
}

template <typename T>
InceptionLayer<T>::InceptionLayer(InceptionSpec spec, std::size_t in_channels, std::uint64_t seed)
    : spec_(std::move(spec)), in_channels_(in_channels) {
  spec_.validate();
  if (in_channels == 0) throw ConfigError("inception layer needs at least one input channel");
  const std::size_t s = spec_.stride;
  // A final branch conv carries a bias only when no batch norm follows it.
  const bool final_bias = !spec_.batch_norm;
  for (std::size_t i = 0; i < spec_.branches.size(); ++i) {
    const BranchSpec& bs = spec_.branches[i];
    Branch b{bs, std::nullopt, {}, std::nullopt};
    std::size_t cin = in_channels;
    if (bs.bottleneck) {
      b.reduce = make_conv<T>(cin, bs.bottleneck, {1, 1}, {1, 1}, {0, 0}, true, derive_seed(seed, {i, 0}));
      cin = bs.bottleneck;
    }
    const std::size_t k = bs.kernel, half = bs.kernel / 2;
    switch (bs.kind) {
      case BranchSpec::Kind::kConv:
        b.main = make_conv<T>(cin, bs.out_channels, {k, k}, {s, s}, {half, half}, final_bias,
                              derive_seed(seed, {i, 1}));
        break;
      case BranchSpec::Kind::kPoolThenConv:
        b.main = make_conv<T>(cin, bs.out_channels, {1, 1}, {1, 1}, {0, 0}, final_bias, derive_seed(seed, {i, 1}));
        break;
      case BranchSpec::Kind::kDecomposedConv:
        b.main = make_conv<T>(cin, bs.mid(), {k, 1}, {1, 1}, {half, 0}, true, derive_seed(seed, {i, 1}));
        b.second = make_conv<T>(bs.mid(), bs.out_channels, {1, k}, {s, s}, {0, half}, final_bias,
                                derive_seed(seed, {i, 2}));
        break;
    }
    branches_.push_back(std::move(b));
  }
  if (spec_.batch_norm) bn_ = BatchNormState<T>::create(spec_.out_channels());
}

template <typename T>
std::size_t InceptionLayer<T>::footprint() const {
  std::size_t k = 1;
  for (const auto& b : branches_) {
    k = std::max(k, b.spec.kind == BranchSpec::Kind::kPoolThenConv ? std::size_t{3} : b.spec.kernel);
  }
  return k;
}

template <typename T>
MaskedActivation<T> InceptionLayer<T>::run_branch(const Branch& b, const MaskedActivation<T>& input) const {
  MaskedActivation<T> x = input;
  if (b.reduce) x = partial_conv2d(x, *b.reduce, spec_.norm_mode);
  if (b.spec.kind == BranchSpec::Kind::kPoolThenConv) x = partial_max_pool2d(x, 3, spec_.stride, 1);
  x = partial_conv2d(x, b.main, spec_.norm_mode);
  if (b.second) x = partial_conv2d(x, *b.second, spec_.norm_mode);
  return x;
}

template <typename T>
std::vector<MaskedActivation<T>> InceptionLayer<T>::run_branches(const MaskedActivation<T>& input) const {
  if (input.features.shape().c != in_channels_) {
    throw ShapeError("inception: expected " + std::to_string(in_channels_) + " input channels, got " +
                     std::to_string(input.features.shape().c));
  }
  std::vector<MaskedActivation<T>> outs;
  outs.reserve(branches_.size());
  for (const auto& b : branches_) outs.push_back(run_branch(b, input));
  return outs;
}

template <typename T>
MaskedActivation<T> InceptionLayer<T>::forward(const MaskedActivation<T>& input, Mode mode) {
  std::vector<MaskedActivation<T>> outs = run_branches(input);
  std::vector<Tensor<T>> features;
  features.reserve(outs.size());
  const Shape ms = outs.front().mask.shape();
  std::vector<T> merged(ms.numel(), T(0));
  for (const auto& o : outs) {
    if (o.mask.shape() != ms) throw ShapeError("inception: branch outputs disagree in extent");
    const auto m = o.mask.data();
    for (std::size_t i = 0; i < merged.size(); ++i) merged[i] = std::max(merged[i], m[i]);
    features.push_back(o.features);
  }
  // Invariant: the union of branch masks is the update rule at the widest footprint.
  const std::size_t k = footprint();
  const Tensor<T> expected = propagate_mask(input.mask, {k, k}, {spec_.stride, spec_.stride}, {k / 2, k / 2});
  if (!std::equal(merged.begin(), merged.end(), expected.data().begin())) {
    throw StateError("inception: branch masks do not combine to the layer footprint mask");
  }
  Tensor<T> y = concat_channels(features);
  if (bn_) y = batch_norm(y, *bn_, mode);
  y = activation(y, spec_.activation);
  return {y, Tensor<T>::from_data(ms, std::move(merged))};
}

template <typename T>
std::vector<Tensor<T>> InceptionLayer<T>::branch_outputs(const MaskedActivation<T>& input) {
  std::vector<Tensor<T>> out;
  for (auto& o : run_branches(input)) out.push_back(o.features);
  return out;
}

template <typename T>
void InceptionLayer<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const std::string p = prefix + ".branch" + std::to_string(i);
    const Branch& b = branches_[i];
    if (b.reduce) collect_conv(p + ".reduce", *b.reduce, out);
    collect_conv(p + ".conv", b.main, out);
    if (b.second) collect_conv(p + ".conv2", *b.second, out);
  }
  if (bn_) collect_bn(prefix + ".bn", *bn_, out);
}

template class InceptionLayer<float>;
template class InceptionLayer<double>;

}  // namespace dign
