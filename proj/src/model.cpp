#include "fca/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fca/rng.hpp"

namespace fca::model {

void validate(const ModelConfig& cfg) {
  if (cfg.input_dim == 0) throw std::invalid_argument("model config: input_dim must be positive");
  if (cfg.hidden_dims.empty())
    throw std::invalid_argument("model config: at least one hidden layer is required");
  for (auto h : cfg.hidden_dims)
    if (h == 0) throw std::invalid_argument("model config: hidden dims must be positive");
  if (cfg.num_classes < 2)
    throw std::invalid_argument("model config: num_classes must be at least 2");
}

std::size_t param_count(const ModelConfig& cfg) {
  validate(cfg);
  std::size_t n = 0;
  std::size_t in = cfg.input_dim;
  for (auto h : cfg.hidden_dims) {
    n += in * h + h;
    in = h;
  }
  n += in * cfg.num_classes + cfg.num_classes;
  return n;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& l : params.extractor) n += l.weight.size() + l.bias.size();
  return n + params.head.weight.size() + params.head.bias.size();
}

namespace {

LayerParams init_layer(std::size_t in, std::size_t out, rng::Rng& r) {
  LayerParams l;
  l.in = in;
  l.out = out;
  l.weight.resize(in * out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& w : l.weight) w = r.uniform(-bound, bound);
  l.bias.assign(out, 0.0);
  return l;
}

void check_layer_compatible(const LayerParams& a, const LayerParams& b, const char* what) {
  if (a.in != b.in || a.out != b.out)
    throw std::invalid_argument(std::string(what) + ": layer shapes differ");
}

void check_compatible(const ModelParams& a, const ModelParams& b, const char* what) {
  if (a.extractor.size() != b.extractor.size())
    throw std::invalid_argument(std::string(what) + ": extractor depths differ");
  for (std::size_t i = 0; i < a.extractor.size(); ++i)
    check_layer_compatible(a.extractor[i], b.extractor[i], what);
  check_layer_compatible(a.head, b.head, what);
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg) {
  validate(cfg);
  rng::Rng r(cfg.seed);
  ModelParams p;
  std::size_t in = cfg.input_dim;
  for (auto h : cfg.hidden_dims) {
    p.extractor.push_back(init_layer(in, h, r));
    in = h;
  }
  p.head = init_layer(in, cfg.num_classes, r);
  return p;
}

ParamDelta subtract(const ModelParams& after, const ModelParams& before) {
  check_compatible(after, before, "subtract");
  ParamDelta d = after;
  auto blocks_d = block_values(d);
  auto blocks_b = block_values(before);
  for (std::size_t b = 0; b < blocks_d.size(); ++b)
    for (std::size_t j = 0; j < blocks_d[b]->size(); ++j)
      (*blocks_d[b])[j] -= (*blocks_b[b])[j];
  return d;
}

ModelParams apply_delta(const ModelParams& base, const std::vector<double>& weights,
                        const std::vector<ParamDelta>& deltas) {
  if (weights.size() != deltas.size())
    throw std::invalid_argument("apply_delta: one weight per delta required");
  for (double w : weights)
    if (!std::isfinite(w)) throw std::invalid_argument("apply_delta: non-finite weight");
  ModelParams out = base;
  if (deltas.empty()) return out;
  for (const auto& d : deltas) check_compatible(base, d, "apply_delta");

  auto out_blocks = block_values(out);
  std::vector<std::vector<const std::vector<double>*>> delta_blocks;
  delta_blocks.reserve(deltas.size());
  for (const auto& d : deltas) delta_blocks.push_back(block_values(d));

  for (std::size_t b = 0; b < out_blocks.size(); ++b) {
    auto& dst = *out_blocks[b];
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < deltas.size(); ++i)
        s += weights[i] * (*delta_blocks[i][b])[j];
      dst[j] += s;
    }
  }
  return out;
}

ExtractorTensors lift_extractor(autodiff::Tape& tape, const ModelParams& params, bool trainable) {
  ExtractorTensors t;
  for (const auto& l : params.extractor) {
    autodiff::Shape ws{l.in, l.out}, bs{l.out};
    t.weights.push_back(trainable ? tape.leaf(ws, l.weight) : tape.constant(ws, l.weight));
    t.biases.push_back(trainable ? tape.leaf(bs, l.bias) : tape.constant(bs, l.bias));
  }
  return t;
}

HeadTensors lift_head(autodiff::Tape& tape, const LayerParams& head, bool trainable) {
  autodiff::Shape ws{head.in, head.out}, bs{head.out};
  HeadTensors t;
  t.weight = trainable ? tape.leaf(ws, head.weight) : tape.constant(ws, head.weight);
  t.bias = trainable ? tape.leaf(bs, head.bias) : tape.constant(bs, head.bias);
  return t;
}

autodiff::Tensor forward_features(autodiff::Tape& tape, const ExtractorTensors& ext,
                                  const autodiff::Tensor& x) {
  if (ext.weights.empty()) throw std::invalid_argument("forward_features: empty extractor");
  autodiff::Tensor h = x;
  for (std::size_t i = 0; i < ext.weights.size(); ++i)
    h = tape.relu(tape.add(tape.matmul(h, ext.weights[i]), ext.biases[i]));
  return h;
}

autodiff::Tensor forward_head(autodiff::Tape& tape, const HeadTensors& head,
                              const autodiff::Tensor& feats) {
  return tape.add(tape.matmul(feats, head.weight), head.bias);
}

std::vector<const std::vector<double>*> block_values(const ModelParams& params) {
  std::vector<const std::vector<double>*> v;
  for (const auto& l : params.extractor) {
    v.push_back(&l.weight);
    v.push_back(&l.bias);
  }
  v.push_back(&params.head.weight);
  v.push_back(&params.head.bias);
  return v;
}

std::vector<std::vector<double>*> block_values(ModelParams& params) {
  std::vector<std::vector<double>*> v;
  for (auto& l : params.extractor) {
    v.push_back(&l.weight);
    v.push_back(&l.bias);
  }
  v.push_back(&params.head.weight);
  v.push_back(&params.head.bias);
  return v;
}

namespace {

void write_f64_le(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  std::array<unsigned char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

double read_f64_le(std::istream& is) {
  std::array<unsigned char, 8> b;
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw std::runtime_error("load_params: truncated float stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

void write_block(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) write_f64_le(os, x);
}

void read_block(std::istream& is, std::vector<double>& v) {
  for (auto& x : v) x = read_f64_le(is);
}

}  // namespace

void save_params(const ModelParams& params, std::ostream& os) {
  os << "fca-params 1\n";
  os << "layers " << params.extractor.size() << "\n";
  for (std::size_t i = 0; i < params.extractor.size(); ++i)
    os << "extractor " << i << " " << params.extractor[i].in << " " << params.extractor[i].out
       << "\n";
  os << "head " << params.head.in << " " << params.head.out << "\n";
  os << "data\n";
  for (const auto& l : params.extractor) {
    write_block(os, l.weight);
    write_block(os, l.bias);
  }
  write_block(os, params.head.weight);
  write_block(os, params.head.bias);
}

ModelParams load_params(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "fca-params" || version != 1)
    throw std::runtime_error("load_params: unrecognized header");
  std::string key;
  std::size_t layers = 0;
  if (!(is >> key >> layers) || key != "layers")
    throw std::runtime_error("load_params: malformed layer count");
  ModelParams p;
  for (std::size_t i = 0; i < layers; ++i) {
    std::size_t idx = 0;
    LayerParams l;
    if (!(is >> key >> idx >> l.in >> l.out) || key != "extractor" || idx != i)
      throw std::runtime_error("load_params: malformed extractor manifest");
    l.weight.resize(l.in * l.out);
    l.bias.resize(l.out);
    p.extractor.push_back(std::move(l));
  }
  if (!(is >> key >> p.head.in >> p.head.out) || key != "head")
    throw std::runtime_error("load_params: malformed head manifest");
  p.head.weight.resize(p.head.in * p.head.out);
  p.head.bias.resize(p.head.out);
  if (!(is >> key) || key != "data") throw std::runtime_error("load_params: missing data marker");
  is.get();  // the newline before the raw stream
  for (auto& l : p.extractor) {
    read_block(is, l.weight);
    read_block(is, l.bias);
  }
  read_block(is, p.head.weight);
  read_block(is, p.head.bias);
  if (p.extractor.empty()) throw std::runtime_error("load_params: extractor must be non-empty");
  return p;
}

}  // namespace fca::model
