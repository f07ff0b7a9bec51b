#include "fairft/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fairft/error.hpp"

namespace fairft {

using nlohmann::json;

void ModelSpec::validate() const {
  if (input_dim == 0) throw SpecError("model spec: input_dim must be positive");
  if (hidden_dims.empty()) throw SpecError("model spec: at least one hidden layer is required");
  for (std::size_t i = 0; i < hidden_dims.size(); ++i)
    if (hidden_dims[i] == 0)
      throw SpecError("model spec: hidden_dims[" + std::to_string(i) + "] is zero");
}

std::string_view to_string(Part p) { return p == Part::head ? "head" : "extractor"; }

DecomposableModel::DecomposableModel(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t offset = 0;
  std::size_t in = spec_.input_dim;
  auto push = [&](std::size_t out, Activation act) {
    AffineLayer l{in, out, offset, offset + in * out, act};
    offset += l.parameter_count();
    layers_.push_back(l);
    in = out;
  };
  for (std::size_t h : spec_.hidden_dims) push(h, Activation::relu);
  push(1, Activation::sigmoid);
  params_ = ad::Tensor::zeros({offset});
}

std::vector<Parameter> DecomposableModel::parameters() const {
  std::vector<Parameter> out;
  out.reserve(parameter_count());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Part part = l == head_boundary() ? Part::head : Part::extractor;
    for (std::size_t i = 0; i < layers_[l].parameter_count(); ++i)
      out.push_back({layers_[l].weight_offset + i, l, part});
  }
  return out;
}

std::vector<std::size_t> DecomposableModel::layer_map() const {
  std::vector<std::size_t> out(parameter_count());
  for (std::size_t l = 0; l < layers_.size(); ++l)
    for (std::size_t i = 0; i < layers_[l].parameter_count(); ++i) out[layers_[l].weight_offset + i] = l;
  return out;
}

Part DecomposableModel::part_of(std::size_t id) const {
  if (id >= parameter_count())
    throw ContractError("parameter id " + std::to_string(id) + " out of range");
  return id >= head_offset() ? Part::head : Part::extractor;
}

void DecomposableModel::check_width(const ad::Tensor& x) const {
  if (x.rank() != 2 || x.cols() != spec_.input_dim)
    throw DimensionError("predict: input of shape " + ad::shape_string(x.shape()) +
                         " does not match input_dim " + std::to_string(spec_.input_dim));
}

ad::Var DecomposableModel::forward(ad::Tape& tape, ad::Var flat, const ad::Tensor& x) const {
  check_width(x);
  if (flat.value().size() != parameter_count())
    throw DimensionError("forward: parameter tensor has " + std::to_string(flat.value().size()) +
                         " values, model has " + std::to_string(parameter_count()));
  ad::Var h = tape.constant(x);
  for (const AffineLayer& l : layers_) {
    ad::Var w = ad::view(flat, l.weight_offset, {l.in, l.out});
    ad::Var b = ad::view(flat, l.bias_offset, {1, l.out});
    ad::Var z = ad::add(ad::matmul(h, w), b);
    h = l.activation == Activation::relu ? ad::relu(z) : ad::sigmoid(z);
  }
  return h;
}

ad::Var DecomposableModel::forward(ad::Tape& tape, const ad::Tensor& x) {
  return forward(tape, tape.parameter(params_), x);
}

ad::Tensor DecomposableModel::predict(const ad::Tensor& x) const {
  ad::Tape tape;
  ad::Var flat = tape.constant(ad::Tensor(params_.shape(), {params_.values().begin(), params_.values().end()}));
  return forward(tape, flat, x).value();
}

DecomposableModel build_mlp(const ModelSpec& spec) {
  DecomposableModel m(spec);
  std::mt19937_64 rng(spec.seed);
  auto values = m.params().values();
  for (const AffineLayer& l : m.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < l.in * l.out; ++i) values[l.weight_offset + i] = dist(rng);
  }
  return m;
}

ad::Tensor predict(const DecomposableModel& model, const ad::Tensor& x) { return model.predict(x); }

Partition partition(const DecomposableModel& model) {
  Partition p;
  for (std::size_t id = 0; id < model.parameter_count(); ++id)
    (id < model.head_offset() ? p.extractor : p.head).push_back(id);
  return p;
}

// ---------------------------------------------------------------------------
// Serialization

json model_to_json(const DecomposableModel& model) {
  json params = json::array();
  const auto values = model.params().values();
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const AffineLayer& layer = model.layers()[l];
    const std::string part(to_string(l == model.head_boundary() ? Part::head : Part::extractor));
    auto block = [&](std::size_t offset, std::vector<std::size_t> shape, std::size_t n) {
      params.push_back({{"id", offset},
                        {"layer", l},
                        {"part", part},
                        {"shape", shape},
                        {"values", std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(offset),
                                                       values.begin() + static_cast<std::ptrdiff_t>(offset + n))}});
    };
    block(layer.weight_offset, {layer.in, layer.out}, layer.in * layer.out);
    block(layer.bias_offset, {1, layer.out}, layer.out);
  }
  return {{"format_version", kModelFormatVersion},
          {"input_dim", model.spec().input_dim},
          {"hidden_dims", model.spec().hidden_dims},
          {"seed", model.spec().seed},
          {"head_boundary", model.head_boundary()},
          {"parameters", std::move(params)}};
}

DecomposableModel model_from_json(const json& doc) {
  try {
    if (!doc.is_object()) throw FormatError("model file: top level is not an object");
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw FormatError("model file: format_version " + std::to_string(version) + " unsupported (expected " +
                        std::to_string(kModelFormatVersion) + ")");
    ModelSpec spec;
    spec.input_dim = doc.at("input_dim").get<std::size_t>();
    spec.hidden_dims = doc.at("hidden_dims").get<std::vector<std::size_t>>();
    if (doc.contains("seed")) spec.seed = doc.at("seed").get<std::uint64_t>();
    DecomposableModel model(spec);

    const auto head_boundary = doc.at("head_boundary").get<std::size_t>();
    if (head_boundary != model.head_boundary())
      throw FormatError("model file: head_boundary " + std::to_string(head_boundary) +
                        " inconsistent with " + std::to_string(spec.hidden_dims.size()) + " hidden layers");

    const json& blocks = doc.at("parameters");
    if (blocks.size() != 2 * model.layers().size())
      throw FormatError("model file: expected " + std::to_string(2 * model.layers().size()) +
                        " parameter blocks, found " + std::to_string(blocks.size()));
    auto values = model.params().values();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::size_t l = b / 2;
      const AffineLayer& layer = model.layers()[l];
      const bool is_bias = b % 2 == 1;
      const std::size_t offset = is_bias ? layer.bias_offset : layer.weight_offset;
      const std::vector<std::size_t> shape = is_bias ? std::vector<std::size_t>{1, layer.out}
                                                     : std::vector<std::size_t>{layer.in, layer.out};
      const json& blk = blocks[b];
      const std::string where = "model file: parameter block " + std::to_string(b);
      if (blk.at("id").get<std::size_t>() != offset) throw FormatError(where + ": id out of sequence");
      if (blk.at("layer").get<std::size_t>() != l) throw FormatError(where + ": wrong layer index");
      const std::string expected_part(to_string(l == model.head_boundary() ? Part::head : Part::extractor));
      if (blk.at("part").get<std::string>() != expected_part) throw FormatError(where + ": wrong part");
      if (blk.at("shape").get<std::vector<std::size_t>>() != shape) throw FormatError(where + ": wrong shape");
      const auto vals = blk.at("values").get<std::vector<double>>();
      if (vals.size() != shape[0] * shape[1]) throw FormatError(where + ": value count does not match shape");
      for (std::size_t i = 0; i < vals.size(); ++i) {
        if (!std::isfinite(vals[i])) throw FormatError(where + ": non-finite value");
        values[offset + i] = vals[i];
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  } catch (const SpecError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
}

void save_model(const DecomposableModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << model_to_json(model).dump(1) << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
}

DecomposableModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": corrupt model file: " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace fairft
