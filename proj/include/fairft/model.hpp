#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fairft/autodiff.hpp"

namespace fairft {

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::uint64_t seed = 0;

  void validate() const;  // throws SpecError
  bool operator==(const ModelSpec&) const = default;
};

enum class Part { extractor, head };
std::string_view to_string(Part p);

enum class Activation { relu, sigmoid };

// Scalar parameter identity. Ids are contiguous 0..n-1 in build order: each
// layer's weights (row-major, input x output) followed by its offsets.
struct Parameter {
  std::size_t id = 0;
  std::size_t layer = 0;
  Part part = Part::extractor;
};

struct AffineLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  Activation activation = Activation::relu;

  std::size_t parameter_count() const { return in * out + out; }
};

struct Partition {
  std::vector<std::size_t> extractor;
  std::vector<std::size_t> head;
};

// Binary classifier f = C(E(x)): relu hidden layers form the extractor E, the
// final sigmoid affine layer is the head C. All scalar parameters live in one
// flat tensor indexed by parameter id.
class DecomposableModel {
 public:
  DecomposableModel() = default;
  explicit DecomposableModel(ModelSpec spec);  // zero-initialised parameters

  const ModelSpec& spec() const { return spec_; }
  const std::vector<AffineLayer>& layers() const { return layers_; }
  std::size_t head_boundary() const { return layers_.size() - 1; }
  const AffineLayer& head() const { return layers_.back(); }

  std::size_t parameter_count() const { return params_.size(); }
  std::vector<Parameter> parameters() const;
  std::vector<std::size_t> layer_map() const;  // id -> layer index
  Part part_of(std::size_t id) const;
  // First id belonging to the head; extractor ids are [0, head_offset()).
  std::size_t head_offset() const { return head().weight_offset; }

  ad::Tensor& params() { return params_; }
  const ad::Tensor& params() const { return params_; }

  // Taped forward pass reading parameters from `flat` (a tensor of
  // parameter_count() values). Returns an (n x 1) probability node.
  ad::Var forward(ad::Tape& tape, ad::Var flat, const ad::Tensor& x) const;
  // Taped forward pass with this model's parameters bound as the gradient leaf.
  ad::Var forward(ad::Tape& tape, const ad::Tensor& x);

  // Probabilities in (0, 1), shape (n x 1). Does not touch parameters.
  ad::Tensor predict(const ad::Tensor& x) const;

 private:
  void check_width(const ad::Tensor& x) const;

  ModelSpec spec_;
  std::vector<AffineLayer> layers_;
  ad::Tensor params_;
};

// Seeded uniform He-style weights (U(-sqrt(6/fan_in), +sqrt(6/fan_in))), zero offsets.
DecomposableModel build_mlp(const ModelSpec& spec);

ad::Tensor predict(const DecomposableModel& model, const ad::Tensor& x);

Partition partition(const DecomposableModel& model);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const DecomposableModel& model);
DecomposableModel model_from_json(const nlohmann::json& doc);  // throws FormatError
void save_model(const DecomposableModel& model, const std::filesystem::path& path);
DecomposableModel load_model(const std::filesystem::path& path);

}  // namespace fairft
