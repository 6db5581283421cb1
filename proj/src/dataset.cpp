#include "asl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>

#include "asl/csv.hpp"

namespace fs = std::filesystem;

namespace asl {

std::size_t ClassHistogram::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

namespace {

bool hidden(const fs::path& p) {
  const auto name = p.filename().string();
  return !name.empty() && name[0] == '.';
}

void sort_entries(std::vector<ManifestEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return a.class_index != b.class_index ? a.class_index < b.class_index : a.path < b.path;
  });
}

}  // namespace

Manifest scan_manifest(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset root " + root.string() + " is not a readable directory");
  std::vector<std::string> classes;
  try {
    for (const auto& d : fs::directory_iterator(root)) {
      if (d.is_directory() && !hidden(d.path())) classes.push_back(d.path().filename().string());
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot list dataset root: ") + e.what());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw IoError("dataset root " + root.string() + " has no class directories");

  Manifest m;
  m.histogram.class_names = classes;
  m.histogram.counts.assign(classes.size(), 0);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    try {
      for (const auto& f : fs::directory_iterator(root / classes[c])) {
        if (!f.is_regular_file() || hidden(f.path())) continue;
        m.entries.push_back({classes[c] + "/" + f.path().filename().string(), c, classes[c]});
        ++m.histogram.counts[c];
      }
    } catch (const fs::filesystem_error& e) {
      throw IoError("cannot list class directory " + classes[c] + ": " + e.what());
    }
    if (m.histogram.counts[c] == 0) m.warnings.push_back("class '" + classes[c] + "' has no images");
  }
  sort_entries(m.entries);
  return m;
}

Manifest make_manifest(std::vector<ManifestEntry> entries, std::vector<std::string> class_names) {
  Manifest m;
  m.histogram.counts.assign(class_names.size(), 0);
  for (const auto& e : entries) {
    if (e.class_index >= class_names.size()) {
      throw ParameterError("entry " + e.path + " has class index " + std::to_string(e.class_index) + " of " +
                           std::to_string(class_names.size()));
    }
    ++m.histogram.counts[e.class_index];
  }
  m.histogram.class_names = std::move(class_names);
  m.entries = std::move(entries);
  sort_entries(m.entries);
  for (std::size_t i = 1; i < m.entries.size(); ++i) {
    if (m.entries[i].path == m.entries[i - 1].path) throw ParameterError("duplicate manifest path " + m.entries[i].path);
  }
  for (std::size_t c = 0; c < m.histogram.counts.size(); ++c) {
    if (m.histogram.counts[c] == 0) m.warnings.push_back("class '" + m.histogram.class_names[c] + "' has no images");
  }
  return m;
}

std::string manifest_csv(const Manifest& m) {
  std::string out = "path,class_index,class_name\n";
  for (const auto& e : m.entries) out += csv::join({e.path, std::to_string(e.class_index), e.class_name}) + "\n";
  return out;
}

std::string histogram_csv(const ClassHistogram& h) {
  std::string out = "class_name,count\n";
  for (std::size_t c = 0; c < h.class_names.size(); ++c) {
    out += csv::join({h.class_names[c], std::to_string(h.counts[c])}) + "\n";
  }
  return out;
}

std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::train: return "train";
    case Subset::val: return "val";
    case Subset::test: return "test";
  }
  return "?";
}

Subset parse_subset(std::string_view name) {
  if (name == "train") return Subset::train;
  if (name == "val") return Subset::val;
  if (name == "test") return Subset::test;
  throw ParameterError("unknown subset '" + std::string(name) + "' (train, val, test)");
}

SplitRatios parse_ratios(std::string_view text) {
  const auto bad = [&] {
    return ParameterError("ratios must be three comma separated numbers, got '" + std::string(text) + "'");
  };
  std::vector<double> v;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const auto part = text.substr(pos, comma - pos);
    double x = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), x);
    if (part.empty() || ec != std::errc{} || ptr != part.data() + part.size()) throw bad();
    v.push_back(x);
    if (comma == text.size()) break;
    pos = comma + 1;
  }
  if (v.size() != 3) throw bad();
  return {v[0], v[1], v[2]};
}

std::size_t SplitAssignment::count(Subset s) const {
  return static_cast<std::size_t>(std::count(membership.begin(), membership.end(), s));
}

std::vector<std::size_t> SplitAssignment::indices(Subset s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < membership.size(); ++i) {
    if (membership[i] == s) out.push_back(i);
  }
  return out;
}

SplitAssignment stratified_split(std::span<const ManifestEntry> entries, const SplitRatios& ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0)) throw ParameterError("split ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) throw ParameterError("split ratios must sum to 1");

  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < entries.size(); ++i) by_class[entries[i].class_index].push_back(i);

  SplitAssignment out;
  out.seed = seed;
  out.ratios = ratios;
  out.membership.assign(entries.size(), Subset::train);
  Prng rng(seed);
  // The epsilon keeps products like 0.7 * 90 = 62.99999... on the right side of floor.
  constexpr double kSlack = 1e-9;
  for (auto& [cls, members] : by_class) {
    const std::size_t n = members.size();
    if (n < 3) {
      out.warnings.push_back("class " + entries[members.front()].class_name + " has " + std::to_string(n) +
                             " samples; all assigned to train");
      continue;
    }
    shuffle(members, rng);
    const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * n + kSlack));
    const auto n_val =
        std::min(n - n_train, static_cast<std::size_t>(std::floor(ratios.val * n + 0.5 + kSlack)));
    for (std::size_t k = n_train; k < n; ++k) out.membership[members[k]] = k < n_train + n_val ? Subset::val : Subset::test;
  }
  return out;
}

std::string split_csv(std::span<const ManifestEntry> entries, const SplitAssignment& split) {
  if (split.membership.size() != entries.size()) throw ShapeError("split does not match the manifest");
  std::string out = "path,split\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out += csv::join({entries[i].path, std::string(to_string(split.membership[i]))}) + "\n";
  }
  return out;
}

std::vector<Subset> read_split_csv(const fs::path& path, std::span<const ManifestEntry> entries) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"path", "split"}) {
    throw FormatError(path.string() + ": expected header 'path,split'", 0);
  }
  std::map<std::string, Subset> tags;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 2) throw ConfigError(path.string() + " row " + std::to_string(r + 1) + ": expected 2 fields");
    Subset s;
    try {
      s = parse_subset(rows[r][1]);
    } catch (const ParameterError& e) {
      throw ConfigError(path.string() + " row " + std::to_string(r + 1) + ": " + e.what());
    }
    if (!tags.emplace(rows[r][0], s).second) throw ConfigError(path.string() + ": duplicate path " + rows[r][0]);
  }
  std::vector<Subset> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    auto it = tags.find(e.path);
    if (it == tags.end()) throw ConfigError(path.string() + ": no split for " + e.path);
    out.push_back(it->second);
  }
  if (tags.size() != entries.size()) {
    throw ConfigError(path.string() + ": lists " + std::to_string(tags.size() - entries.size()) +
                      " paths missing from the dataset");
  }
  return out;
}

Tensor<float> SampleSet::sample(std::size_t i) const {
  const std::size_t n = sample_size();
  return Tensor<float>({1, side, side}, std::vector<float>(pixels.begin() + i * n, pixels.begin() + (i + 1) * n));
}

Tensor<float> SampleSet::batch(std::span<const std::size_t> order) const {
  const std::size_t n = sample_size();
  Tensor<float> out({order.size(), 1, side, side});
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::copy_n(pixels.begin() + order[k] * n, n, out.data() + k * n);
  }
  return out;
}

void SampleSet::append(const Tensor<float>& x, std::size_t label) {
  if (x.shape() != Shape{1, side, side}) throw ShapeError("sample of shape " + to_string(x.shape()) + " in a set of side " + std::to_string(side));
  if (label >= class_count) throw ParameterError("label " + std::to_string(label) + " out of range");
  pixels.insert(pixels.end(), x.values().begin(), x.values().end());
  labels.push_back(label);
}

SampleSet load_samples(const fs::path& root, const Manifest& manifest, std::span<const std::size_t> indices,
                       std::size_t side, double crop_fraction) {
  SampleSet set;
  set.side = side;
  set.class_count = manifest.class_count();
  set.pixels.reserve(indices.size() * side * side);
  for (auto i : indices) {
    const auto& e = manifest.entries.at(i);
    set.append(preprocess_image(read_image(root / e.path), side, crop_fraction), e.class_index);
  }
  return set;
}

// ---------------------------------------------------------------------------

namespace {

const char* const kGlyphNames[kGlyphKinds] = {"hbar", "vbar", "diag", "anti", "plus", "cross", "square", "ring"};

bool glyph_covers(std::size_t kind, double dx, double dy, double r, double t) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  const double h = t / 2;
  switch (kind) {
    case 0: return ay <= h && ax <= r;
    case 1: return ax <= h && ay <= r;
    case 2: return std::abs(dx - dy) <= h * std::sqrt(2.0) && ax <= r && ay <= r;
    case 3: return std::abs(dx + dy) <= h * std::sqrt(2.0) && ax <= r && ay <= r;
    case 4: return (ay <= h && ax <= r) || (ax <= h && ay <= r);
    case 5:
      return (std::abs(dx - dy) <= h * std::sqrt(2.0) || std::abs(dx + dy) <= h * std::sqrt(2.0)) && ax <= r && ay <= r;
    case 6: {
      const double m = std::max(ax, ay);
      return m <= r && m >= r - t;
    }
    default: {
      const double d = std::hypot(dx, dy);
      return d <= r && d >= r - t;
    }
  }
}

}  // namespace

GlyphSet generate_glyphs(const GlyphOptions& o) {
  if (o.classes < 2 || o.classes > kGlyphKinds) {
    throw ParameterError("glyph class count must lie in [2, " + std::to_string(kGlyphKinds) + "]");
  }
  if (o.side < 8) throw ParameterError("glyph side must be at least 8");
  if (o.per_class == 0) throw ParameterError("glyph samples per class must be positive");

  std::vector<std::string> names;
  for (std::size_t c = 0; c < o.classes; ++c) names.push_back(std::to_string(c) + "_" + kGlyphNames[c]);

  Prng rng(o.seed);
  const double s = static_cast<double>(o.side);
  std::vector<ManifestEntry> entries;
  std::vector<GrayImage> images;
  for (std::size_t c = 0; c < o.classes; ++c) {
    for (std::size_t k = 0; k < o.per_class; ++k) {
      const double r = s * (0.26 + 0.08 * rng.uniform());
      const double t = 2.0 + 1.0 * rng.uniform();
      const double cx = r + 0.5 + (s - 2 * r - 1) * rng.uniform();
      const double cy = r + 0.5 + (s - 2 * r - 1) * rng.uniform();
      const double bg = 20 + 50 * rng.uniform();
      const double fg = 170 + 70 * rng.uniform();
      // Smooth illumination ramp across the frame.
      const double angle = 2 * std::numbers::pi * rng.uniform();
      const double ramp = 120.0 * rng.uniform() / s;
      const double gx = ramp * std::cos(angle), gy = ramp * std::sin(angle);
      GrayImage img(o.side, o.side);
      for (std::size_t y = 0; y < o.side; ++y) {
        for (std::size_t x = 0; x < o.side; ++x) {
          const bool on = glyph_covers(c, x + 0.5 - cx, y + 0.5 - cy, r, t);
          const double v = (on ? fg : bg) + gx * (x + 0.5 - s / 2) + gy * (y + 0.5 - s / 2) + 10.0 * rng.gaussian_pair().first;
          img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
      char file[32];
      std::snprintf(file, sizeof file, "%05zu.pgm", k);
      entries.push_back({names[c] + "/" + file, c, names[c]});
      images.push_back(std::move(img));
    }
  }
  // Entries are generated already in (class, path) order, so images stay aligned.
  GlyphSet set{make_manifest(std::move(entries), names), std::move(images)};
  return set;
}

void write_glyph_tree(const fs::path& root, const GlyphSet& set) {
  for (const auto& name : set.manifest.histogram.class_names) fs::create_directories(root / name);
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    write_file(root / set.manifest.entries[i].path, encode_pgm(set.images[i]));
  }
}

SampleSet glyph_samples(const GlyphSet& set, std::span<const std::size_t> indices, std::size_t side) {
  SampleSet out;
  out.side = side;
  out.class_count = set.manifest.class_count();
  for (auto i : indices) out.append(preprocess_image(set.images.at(i), side), set.manifest.entries.at(i).class_index);
  return out;
}

}  // namespace asl
