#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asl/layers.hpp"

namespace asl {

/// The input of layer `from` is carried around the branch and added at the
/// residual_add layer `to`.
struct SkipLink {
  std::size_t from = 0;
  std::size_t to = 0;
  bool operator==(const SkipLink&) const = default;
};

struct ModelGraph {
  Shape input_shape;  // [C, H, W]
  std::vector<LayerSpec> layers;
  std::vector<SkipLink> skip_links;
  std::vector<std::string> class_names;  // optional; empty or one per class

  /// Width of the final softmax.
  std::size_t class_count() const;

  bool operator==(const ModelGraph&) const = default;
};

/// Shape or wiring fault in a graph, tied to a layer where one is at fault.
class GraphError : public ShapeError {
 public:
  GraphError(std::optional<std::size_t> layer, const std::string& what) : ShapeError(what), layer_(layer) {}
  std::optional<std::size_t> layer() const noexcept { return layer_; }

 private:
  std::optional<std::size_t> layer_;
};

/// Checks the graph and returns the per-sample input shape of every layer
/// followed by the model output shape. Shape problems name the layer index.
std::vector<Shape> validate_graph(const ModelGraph& graph);

enum class Preset { ann, cnn, resnet18 };

Preset parse_preset(std::string_view name);
std::string_view to_string(Preset p);

struct PresetOptions {
  std::size_t input_side = 64;
  std::size_t class_count = 32;
  /// Divides every hidden width; miniature models for gradient checks use > 1.
  std::size_t width_divisor = 1;
  double dropout = 0.5;
};

ModelGraph build_preset(Preset preset, const PresetOptions& options = {});

/// Line-oriented model description, see README for the grammar.
/// Rejects malformed or shape-inconsistent input with ConfigError naming the line.
ModelGraph parse_model_config(std::string_view text);
std::string serialize_model_config(const ModelGraph& graph);

/// Layer instances for a graph, run as one network.
template <typename T>
class Model {
 public:
  explicit Model(ModelGraph graph, std::uint64_t init_seed = 0);

  const ModelGraph& graph() const noexcept { return graph_; }
  std::size_t class_count() const noexcept { return class_count_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  /// Class probabilities [batch, classes].
  Tensor<T> forward(const Tensor<T>& batch, Mode mode);
  /// Pre-softmax scores; the input to softmax_cross_entropy during training.
  Tensor<T> forward_scores(const Tensor<T>& batch, Mode mode);
  /// Back-propagates dL/dscores from the last train-mode forward, filling
  /// every parameter gradient. Returns dL/dinput.
  Tensor<T> backward(const Tensor<T>& dscores);

  std::vector<ParamRef<T>> params();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const;
  std::size_t parameter_count() const;

  /// Stream consumed by dropout layers in train mode.
  Prng& dropout_rng() noexcept { return dropout_rng_; }

 private:
  Tensor<T> run(const Tensor<T>& x, std::size_t end, Mode mode);

  ModelGraph graph_;
  std::size_t class_count_ = 0;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::ptrdiff_t> skip_source_;  // per residual_add: index of `from`, else -1
  Prng dropout_rng_;
  std::size_t cached_end_ = 0;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Checkpoints (little-endian): "ASLN" | u32 version | u32 len + graph text |
// u32 count | per parameter: u16 len + name, u8 rank, u64 dims, f32 payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model);
Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace asl
