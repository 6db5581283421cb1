#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asl/image.hpp"
#include "asl/tensor.hpp"

namespace asl {

struct ManifestEntry {
  std::string path;  // relative to the dataset root, '/' separated
  std::size_t class_index = 0;
  std::string class_name;
  bool operator==(const ManifestEntry&) const = default;
};

struct ClassHistogram {
  std::vector<std::string> class_names;
  std::vector<std::size_t> counts;
  std::size_t total() const;
};

struct Manifest {
  std::vector<ManifestEntry> entries;  // sorted by (class_index, path)
  ClassHistogram histogram;
  std::vector<std::string> warnings;

  std::size_t class_count() const { return histogram.class_names.size(); }
};

/// One subdirectory per class; class indices follow the sorted directory names.
/// Hidden files are skipped. An empty class stays in the histogram with count 0.
Manifest scan_manifest(const std::filesystem::path& root);

/// Builds a manifest over in-memory entries; sorts them and recomputes the histogram.
Manifest make_manifest(std::vector<ManifestEntry> entries, std::vector<std::string> class_names);

std::string manifest_csv(const Manifest& m);
std::string histogram_csv(const ClassHistogram& h);

enum class Subset { train, val, test };

std::string_view to_string(Subset s);
Subset parse_subset(std::string_view name);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

/// "0.70,0.15,0.15"
SplitRatios parse_ratios(std::string_view text);

struct SplitAssignment {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::vector<Subset> membership;  // parallel to the manifest entries
  std::vector<std::string> warnings;

  std::size_t count(Subset s) const;
  std::vector<std::size_t> indices(Subset s) const;
};

/// Per class, in class order, the entries are shuffled with one Prng(seed);
/// the first floor(train*n) go to train, the next round-half-up(val*n) to val
/// and the rest to test. Classes with fewer than 3 samples go wholly to train.
SplitAssignment stratified_split(std::span<const ManifestEntry> entries, const SplitRatios& ratios, std::uint64_t seed);

std::string split_csv(std::span<const ManifestEntry> entries, const SplitAssignment& split);
/// Membership for `entries` read back from a split CSV. Every entry must be
/// listed exactly once and nothing else.
std::vector<Subset> read_split_csv(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Preprocessed samples stored contiguously, each of shape [1, side, side].
struct SampleSet {
  std::size_t side = 0;
  std::size_t class_count = 0;
  std::vector<float> pixels;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return side * side; }
  Tensor<float> sample(std::size_t i) const;
  Tensor<float> batch(std::span<const std::size_t> order) const;
  void append(const Tensor<float>& x, std::size_t label);
};

/// Decodes and preprocesses the listed manifest entries.
SampleSet load_samples(const std::filesystem::path& root, const Manifest& manifest, std::span<const std::size_t> indices,
                       std::size_t side, double crop_fraction = 1.0);

// ---------------------------------------------------------------------------
// Synthetic glyphs: simple stroke shapes at random positions with noise.

inline constexpr std::size_t kGlyphKinds = 8;

struct GlyphOptions {
  std::size_t classes = 8;
  std::size_t side = 16;
  std::size_t per_class = 200;
  std::uint64_t seed = 0;
};

struct GlyphSet {
  Manifest manifest;
  std::vector<GrayImage> images;  // parallel to manifest.entries
};

GlyphSet generate_glyphs(const GlyphOptions& options);
/// Writes `set` as <root>/<class>/<file>.pgm.
void write_glyph_tree(const std::filesystem::path& root, const GlyphSet& set);
SampleSet glyph_samples(const GlyphSet& set, std::span<const std::size_t> indices, std::size_t side);

}  // namespace asl
