#include "asl/model.hpp"

#include <algorithm>
#include <map>

namespace asl {

std::size_t ModelGraph::class_count() const {
  if (layers.empty() || layers.back().kind != LayerKind::softmax) return 0;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (it->kind == LayerKind::dense) return it->units;
  }
  return 0;
}

namespace {

[[noreturn]] void layer_error(std::size_t index, const LayerSpec& spec, const std::string& msg) {
  throw GraphError(index, "layer " + std::to_string(index) + " (" + std::string(to_string(spec.kind)) + "): " + msg);
}

}  // namespace

std::vector<Shape> validate_graph(const ModelGraph& graph) {
  if (graph.input_shape.size() != 3 || element_count(graph.input_shape) == 0) {
    throw GraphError(std::nullopt, "model input must be [C,H,W] with positive sizes, got " + to_string(graph.input_shape));
  }
  if (graph.layers.empty() || graph.layers.back().kind != LayerKind::softmax) {
    throw GraphError(graph.layers.empty() ? std::nullopt : std::optional<std::size_t>(graph.layers.size() - 1), "model must end with a softmax layer");
  }

  // Each residual_add has exactly one link; links nest like brackets.
  std::map<std::size_t, std::size_t> source_of;
  for (const auto& link : graph.skip_links) {
    if (link.to >= graph.layers.size() || graph.layers[link.to].kind != LayerKind::residual_add) {
      throw GraphError(link.to, "skip link to layer " + std::to_string(link.to) + " does not end at a residual add");
    }
    if (link.from > link.to) throw GraphError(link.to, "skip link " + std::to_string(link.from) + "->" + std::to_string(link.to) + " runs backwards");
    if (!source_of.emplace(link.to, link.from).second) {
      throw GraphError(link.to, "residual add at layer " + std::to_string(link.to) + " has two skip links");
    }
  }
  for (const auto& a : graph.skip_links) {
    for (const auto& b : graph.skip_links) {
      const bool crossing = a.from < b.from && b.from <= a.to && a.to < b.to;
      if (crossing) throw GraphError(b.to, "skip links " + std::to_string(a.to) + " and " + std::to_string(b.to) + " overlap without nesting");
    }
  }

  std::vector<Shape> shapes;
  shapes.reserve(graph.layers.size() + 1);
  Shape current = graph.input_shape;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& spec = graph.layers[i];
    shapes.push_back(current);
    try {
      if (spec.kind == LayerKind::residual_add) {
        auto src = source_of.find(i);
        if (src == source_of.end()) layer_error(i, spec, "residual add without a skip link");
        const Shape projected = projected_skip_shape(spec, shapes[src->second]);
        if (projected != current) {
          layer_error(i, spec, "skip shape " + to_string(projected) + " differs from branch output " + to_string(current));
        }
      } else if (spec.kind == LayerKind::softmax && i + 1 != graph.layers.size()) {
        layer_error(i, spec, "softmax is only allowed as the final layer");
      }
      current = output_shape(spec, current);
    } catch (const GraphError&) {
      throw;
    } catch (const ShapeError& e) {
      layer_error(i, spec, e.what());
    } catch (const ParameterError& e) {
      layer_error(i, spec, e.what());
    }
  }
  shapes.push_back(current);

  const std::size_t classes = graph.class_count();
  if (classes == 0 || current != Shape{classes}) {
    throw GraphError(graph.layers.size() - 1, "final softmax must follow a dense layer producing the class scores");
  }
  if (!graph.class_names.empty() && graph.class_names.size() != classes) {
    throw GraphError(std::nullopt, "graph lists " + std::to_string(graph.class_names.size()) + " class names for " +
                     std::to_string(classes) + " classes");
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Presets

Preset parse_preset(std::string_view name) {
  if (name == "ann") return Preset::ann;
  if (name == "cnn") return Preset::cnn;
  if (name == "resnet18") return Preset::resnet18;
  throw ParameterError("unknown preset '" + std::string(name) + "' (expected ann, cnn or resnet18)");
}

std::string_view to_string(Preset p) {
  switch (p) {
    case Preset::ann: return "ann";
    case Preset::cnn: return "cnn";
    case Preset::resnet18: return "resnet18";
  }
  return "?";
}

ModelGraph build_preset(Preset preset, const PresetOptions& o) {
  if (o.input_side == 0 || o.class_count == 0 || o.width_divisor == 0) {
    throw ParameterError("preset: input side, class count and width divisor must be positive");
  }
  auto width = [&](std::size_t w) { return std::max<std::size_t>(1, w / o.width_divisor); };
  const auto relu = LayerSpec::act(ActivationKind::relu);

  ModelGraph g;
  g.input_shape = {1, o.input_side, o.input_side};
  auto& L = g.layers;

  switch (preset) {
    case Preset::ann:
      L = {LayerSpec::flatten(), LayerSpec::dense(width(512)), relu, LayerSpec::dropout(o.dropout),
           LayerSpec::dense(o.class_count), LayerSpec::softmax()};
      break;

    case Preset::cnn:
      for (std::size_t ch : {32, 64, 128, 128}) {
        L.push_back(LayerSpec::conv(width(ch), 3, 1, Padding::same));
        L.push_back(relu);
        L.push_back(LayerSpec::maxpool(2, 2));
        L.push_back(LayerSpec::dropout(o.dropout));
      }
      L.push_back(LayerSpec::flatten());
      L.push_back(LayerSpec::dense(width(256)));
      L.push_back(relu);
      L.push_back(LayerSpec::dropout(o.dropout));
      L.push_back(LayerSpec::dense(o.class_count));
      L.push_back(LayerSpec::softmax());
      break;

    case Preset::resnet18: {
      L.push_back(LayerSpec::conv(width(64), 7, 2, Padding::same));
      L.push_back(relu);
      L.push_back(LayerSpec::maxpool(3, 2, Padding::same));
      std::size_t in_ch = width(64);
      for (std::size_t stage = 0; stage < 4; ++stage) {
        const std::size_t ch = width(std::size_t{64} << stage);
        for (std::size_t unit = 0; unit < 2; ++unit) {
          const std::size_t stride = (stage > 0 && unit == 0) ? 2 : 1;
          const std::size_t begin = L.size();
          L.push_back(LayerSpec::conv(ch, 3, stride, Padding::same));
          L.push_back(relu);
          L.push_back(LayerSpec::conv(ch, 3, 1, Padding::same));
          const bool reshape = stride != 1 || ch != in_ch;
          L.push_back(LayerSpec::residual_add(reshape ? ch : 0, reshape ? stride : 1));
          g.skip_links.push_back({begin, L.size() - 1});
          L.push_back(relu);
          in_ch = ch;
        }
      }
      // Global average pool over whatever spatial extent remains.
      const auto shapes = validate_graph([&] {
        ModelGraph probe = g;
        probe.layers.push_back(LayerSpec::flatten());
        probe.layers.push_back(LayerSpec::dense(o.class_count));
        probe.layers.push_back(LayerSpec::softmax());
        return probe;
      }());
      const Shape& last = shapes[L.size()];
      L.push_back(LayerSpec::meanpool(last[1], 1));
      L.push_back(LayerSpec::flatten());
      L.push_back(LayerSpec::dense(o.class_count));
      L.push_back(LayerSpec::softmax());
      break;
    }
  }
  validate_graph(g);
  return g;
}

// ---------------------------------------------------------------------------
// Model

namespace {

/// He gain for layers whose output feeds a relu (directly or through a
/// residual add), unit gain otherwise.
double init_gain(const ModelGraph& g, std::size_t i) {
  for (std::size_t j = i + 1; j < g.layers.size(); ++j) {
    const auto k = g.layers[j].kind;
    if (k == LayerKind::activation) return g.layers[j].activation == ActivationKind::relu ? 2.0 : 1.0;
    if (k != LayerKind::residual_add && k != LayerKind::conv2d) return 1.0;
    if (k == LayerKind::conv2d) return 2.0;
  }
  return 1.0;
}

/// Inverted dropout scales the second moment of its output by 1/(1-rate);
/// the next parametrized layer shrinks its weights by the keep probability
/// to hold activation variance steady.
double input_keep_probability(const ModelGraph& g, std::size_t i) {
  for (std::size_t j = i; j-- > 0;) {
    const auto k = g.layers[j].kind;
    if (k == LayerKind::dropout) return 1.0 - g.layers[j].rate;
    if (k != LayerKind::flatten) return 1.0;
  }
  return 1.0;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelGraph graph, std::uint64_t init_seed) : graph_(std::move(graph)), dropout_rng_(init_seed ^ 0xD50F0A7ULL) {
  const auto shapes = validate_graph(graph_);
  class_count_ = graph_.class_count();
  skip_source_.assign(graph_.layers.size(), -1);
  for (const auto& link : graph_.skip_links) skip_source_[link.to] = static_cast<std::ptrdiff_t>(link.from);

  Prng init_rng(init_seed);
  layers_.reserve(graph_.layers.size());
  for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
    const auto& spec = graph_.layers[i];
    const Shape skip_in = skip_source_[i] >= 0 ? shapes[static_cast<std::size_t>(skip_source_[i])] : Shape{};
    double gain = spec.kind == LayerKind::residual_add ? 2.0 : init_gain(graph_, i);
    gain *= input_keep_probability(graph_, i);
    layers_.push_back(make_layer<T>(spec, shapes[i], init_rng, gain, skip_in));
  }
}

template <typename T>
Tensor<T> Model<T>::run(const Tensor<T>& x, std::size_t end, Mode mode) {
  const Shape& in = graph_.input_shape;
  if (x.rank() != 4 || !std::equal(in.begin(), in.end(), x.shape().begin() + 1)) {
    throw ShapeError("layer 0: model expects [batch]+" + to_string(in) + ", got " + to_string(x.shape()));
  }
  cached_ = false;
  std::map<std::size_t, Tensor<T>> saved;
  for (const auto& link : graph_.skip_links) {
    if (link.to < end && link.from == 0) saved.emplace(0, x);
  }
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < end; ++i) {
    try {
      if (skip_source_[i] >= 0) {
        auto& add = static_cast<ResidualAdd<T>&>(*layers_[i]);
        const auto src = static_cast<std::size_t>(skip_source_[i]);
        cur = add.forward_add(cur, saved.at(src), mode, dropout_rng_);
      } else {
        cur = layers_[i]->forward(cur, mode, dropout_rng_);
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
    }
    for (const auto& link : graph_.skip_links) {
      if (link.from == i + 1 && link.to < end) saved.emplace(i + 1, cur);
    }
  }
  if (mode == Mode::train) {
    cached_ = true;
    cached_end_ = end;
  }
  return cur;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, Mode mode) {
  return run(batch, layers_.size(), mode);
}

template <typename T>
Tensor<T> Model<T>::forward_scores(const Tensor<T>& batch, Mode mode) {
  return run(batch, layers_.size() - 1, mode);
}

template <typename T>
Tensor<T> Model<T>::backward(const Tensor<T>& dscores) {
  if (!cached_) throw StateError("model backward called without a train-mode forward");
  cached_ = false;
  std::map<std::size_t, Tensor<T>> pending;  // skip gradients keyed by the link source
  Tensor<T> g = dscores;
  // The softmax layer is bypassed: training differentiates the loss w.r.t. scores.
  const std::size_t top = std::min(cached_end_, layers_.size() - 1);
  for (std::size_t i = top; i-- > 0;) {
    if (skip_source_[i] >= 0) {
      auto [branch, skip] = static_cast<ResidualAdd<T>&>(*layers_[i]).backward_add(g);
      g = std::move(branch);
      const auto src = static_cast<std::size_t>(skip_source_[i]);
      auto it = pending.find(src);
      if (it == pending.end()) pending.emplace(src, std::move(skip));
      else add_inplace(it->second, skip);
    } else {
      g = layers_[i]->backward(g);
    }
    if (auto it = pending.find(i); it != pending.end()) {
      add_inplace(g, it->second);
      pending.erase(it);
    }
  }
  return g;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::params() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& p : layers_[i]->params()) {
      p.name = "L" + std::to_string(i) + "." + p.name;
      out.push_back(std::move(p));
    }
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& p : const_cast<Model&>(*this).params()) out.emplace_back(p.name, p.value);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t->size();
  return n;
}

template class Model<float>;
template class Model<double>;

}  // namespace asl
