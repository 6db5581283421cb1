#include <charconv>
#include <map>
#include <sstream>

#include "asl/model.hpp"

namespace asl {
namespace {

struct Line {
  std::size_t number;
  std::vector<std::string> words;
};

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("model config line " + std::to_string(line) + ": " + msg);
}

std::size_t parse_count(std::size_t line, const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || out == 0) {
    fail(line, key + " expects a positive integer, got '" + v + "'");
  }
  return out;
}

double parse_real(std::size_t line, const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) fail(line, key + " expects a number, got '" + v + "'");
  return out;
}

Padding parse_padding(std::size_t line, const std::string& v) {
  if (v == "same") return Padding::same;
  if (v == "none") return Padding::none;
  fail(line, "pad expects same or none, got '" + v + "'");
}

/// key=value attributes after the directive; every required key must appear
/// and nothing else may.
class Attributes {
 public:
  Attributes(const Line& l, std::size_t first, std::initializer_list<const char*> required,
             std::initializer_list<const char*> optional = {})
      : line_(l.number) {
    for (std::size_t i = first; i < l.words.size(); ++i) {
      const auto& w = l.words[i];
      const auto eq = w.find('=');
      if (eq == std::string::npos || eq == 0) fail(line_, "expected key=value, got '" + w + "'");
      std::string key = w.substr(0, eq);
      bool known = false;
      for (const char* k : required) known |= key == k;
      for (const char* k : optional) known |= key == k;
      if (!known) fail(line_, "unknown attribute '" + key + "'");
      if (!values_.emplace(key, w.substr(eq + 1)).second) fail(line_, "duplicate attribute '" + key + "'");
    }
    for (const char* k : required) {
      if (!values_.count(k)) fail(line_, std::string("missing attribute '") + k + "'");
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::size_t count(const std::string& key) const { return parse_count(line_, key, values_.at(key)); }
  double real(const std::string& key) const { return parse_real(line_, key, values_.at(key)); }
  Padding padding(const std::string& key) const { return parse_padding(line_, values_.at(key)); }

 private:
  std::size_t line_;
  std::map<std::string, std::string> values_;
};

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string_view padding_name(Padding p) { return p == Padding::same ? "same" : "none"; }

}  // namespace

ModelGraph parse_model_config(std::string_view text) {
  ModelGraph g;
  std::vector<std::size_t> layer_line;  // source line of every layer
  std::vector<std::pair<std::size_t, std::size_t>> open;  // (first branch layer, line)
  bool have_input = false;

  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string raw(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++number;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();

    // Labels keep their text verbatim, including spaces and '#'.
    if (raw.rfind("label ", 0) == 0) {
      g.class_names.push_back(raw.substr(6));
      continue;
    }
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    Line line{number, {}};
    std::istringstream words(raw);
    for (std::string w; words >> w;) line.words.push_back(w);
    if (line.words.empty()) continue;

    const std::string& d = line.words[0];
    auto push = [&](LayerSpec spec) {
      try {
        validate(spec);
      } catch (const ParameterError& e) {
        fail(number, e.what());
      }
      g.layers.push_back(spec);
      layer_line.push_back(number);
    };

    if (d == "input") {
      if (have_input) fail(number, "duplicate input line");
      if (!g.layers.empty()) fail(number, "input must precede all layers");
      Attributes a(line, 1, {"c", "h", "w"});
      g.input_shape = {a.count("c"), a.count("h"), a.count("w")};
      have_input = true;
      continue;
    }
    if (!have_input) fail(number, "the first directive must be 'input'");

    if (d == "conv") {
      Attributes a(line, 1, {"out", "k", "s", "pad"});
      push(LayerSpec::conv(a.count("out"), a.count("k"), a.count("s"), a.padding("pad")));
    } else if (d == "maxpool" || d == "meanpool") {
      Attributes a(line, 1, {"k", "s"}, {"pad"});
      const Padding pad = a.has("pad") ? a.padding("pad") : Padding::none;
      push(d == "maxpool" ? LayerSpec::maxpool(a.count("k"), a.count("s"), pad)
                          : LayerSpec::meanpool(a.count("k"), a.count("s"), pad));
    } else if (d == "relu" || d == "sigmoid" || d == "tanh" || d == "step") {
      Attributes a(line, 1, {});
      const ActivationKind k = d == "relu"      ? ActivationKind::relu
                               : d == "sigmoid" ? ActivationKind::sigmoid
                               : d == "tanh"    ? ActivationKind::tanh
                                                : ActivationKind::step;
      push(LayerSpec::act(k));
    } else if (d == "dropout") {
      Attributes a(line, 1, {"p"});
      push(LayerSpec::dropout(a.real("p")));
    } else if (d == "flatten") {
      Attributes a(line, 1, {});
      push(LayerSpec::flatten());
    } else if (d == "dense") {
      Attributes a(line, 1, {"out"});
      push(LayerSpec::dense(a.count("out")));
    } else if (d == "softmax") {
      Attributes a(line, 1, {});
      push(LayerSpec::softmax());
    } else if (d == "residual") {
      if (line.words.size() < 2) fail(number, "residual expects 'begin' or 'end'");
      if (line.words[1] == "begin") {
        Attributes a(line, 2, {});
        open.emplace_back(g.layers.size(), number);
      } else if (line.words[1] == "end") {
        if (open.empty()) fail(number, "residual end without a matching begin");
        Attributes a(line, 2, {}, {"proj", "s"});
        if (a.has("s") && !a.has("proj")) fail(number, "s= is only meaningful with proj=");
        const std::size_t proj = a.has("proj") ? a.count("proj") : 0;
        const std::size_t stride = a.has("s") ? a.count("s") : 1;
        g.skip_links.push_back({open.back().first, g.layers.size()});
        open.pop_back();
        push(LayerSpec::residual_add(proj, proj ? stride : 1));
      } else {
        fail(number, "residual expects 'begin' or 'end', got '" + line.words[1] + "'");
      }
    } else {
      fail(number, "unknown directive '" + d + "'");
    }
  }

  if (!have_input) fail(number, "missing input line");
  if (!open.empty()) fail(open.back().second, "residual begin without a matching end");
  try {
    validate_graph(g);
  } catch (const GraphError& e) {
    const std::size_t at = e.layer() && *e.layer() < layer_line.size() ? layer_line[*e.layer()] : number;
    fail(at, e.what());
  }
  return g;
}

std::string serialize_model_config(const ModelGraph& g) {
  std::ostringstream out;
  out << "input c=" << g.input_shape.at(0) << " h=" << g.input_shape.at(1) << " w=" << g.input_shape.at(2) << "\n";
  for (const auto& name : g.class_names) out << "label " << name << "\n";
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    // Outer links (ending later) open first.
    std::vector<SkipLink> opening;
    for (const auto& link : g.skip_links) {
      if (link.from == i) opening.push_back(link);
    }
    std::sort(opening.begin(), opening.end(), [](const SkipLink& a, const SkipLink& b) { return a.to > b.to; });
    for (std::size_t k = 0; k < opening.size(); ++k) out << "residual begin\n";

    const LayerSpec& s = g.layers[i];
    switch (s.kind) {
      case LayerKind::dense: out << "dense out=" << s.units; break;
      case LayerKind::conv2d:
        out << "conv out=" << s.units << " k=" << s.kernel << " s=" << s.stride << " pad=" << padding_name(s.padding);
        break;
      case LayerKind::maxpool:
      case LayerKind::meanpool:
        out << to_string(s.kind) << " k=" << s.kernel << " s=" << s.stride;
        if (s.padding == Padding::same) out << " pad=same";
        break;
      case LayerKind::dropout: out << "dropout p=" << format_real(s.rate); break;
      case LayerKind::activation: out << to_string(s.activation); break;
      case LayerKind::flatten: out << "flatten"; break;
      case LayerKind::softmax: out << "softmax"; break;
      case LayerKind::residual_add:
        out << "residual end";
        if (s.projection) out << " proj=" << s.projection << " s=" << s.projection_stride;
        break;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace asl
