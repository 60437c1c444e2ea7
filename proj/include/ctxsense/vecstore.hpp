#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxsense {

using Vec = std::vector<double>;

/// Pretrained word vectors in the classic text interchange format.
///
/// Rows keep the precision they were loaded with; nothing is normalized here.
/// A label may carry a sense suffix ("mac#macbook"), which the store treats
/// as an opaque part of the label.
class VectorStore {
 public:
  VectorStore() = default;
  explicit VectorStore(std::size_t dim) : dim_(dim) {}

  /// Appends a row. Throws on dimension mismatch, duplicate label,
  /// non-finite component or a zero vector.
  void add(std::string label, Vec vector);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }

  const Vec* find(std::string_view label) const;
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const Vec& vector_at(std::size_t row) const { return vectors_.at(row); }

  /// Writes the store in the format `load_vectors` reads, using shortest
  /// round-trip decimal representation.
  void save(const std::filesystem::path& path) const;
  std::string to_text() const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> labels_;
  std::vector<Vec> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

VectorStore load_vectors(const std::filesystem::path& path);
VectorStore parse_vectors(std::string_view text);

struct Sense {
  std::string id;  // empty for unambiguous labels
  Vec vector;
};

/// Label -> ordered senses. Labels are kept sorted so iteration is
/// deterministic.
class SenseInventory {
 public:
  SenseInventory() = default;
  explicit SenseInventory(std::size_t dim) : dim_(dim) {}

  /// Adds a sense to `label`; throws on duplicate sense id or wrong dimension.
  void add_sense(const std::string& label, std::string sense_id, Vec vector);

  /// Returns a copy without the given sense. Throws if it would leave the
  /// label with no senses.
  SenseInventory without_sense(const std::string& label, const std::string& sense_id) const;

  std::size_t dim() const noexcept { return dim_; }
  bool contains(std::string_view label) const;
  bool ambiguous(std::string_view label) const;
  const std::vector<Sense>& senses(std::string_view label) const;
  const Sense* find_sense(std::string_view label, std::string_view sense_id) const;
  const std::map<std::string, std::vector<Sense>, std::less<>>& entries() const noexcept {
    return entries_;
  }

  /// Vector a label contributes to an utterance average: the sense itself
  /// for unambiguous labels, the mean of its senses otherwise.
  const Vec* surface_vector(std::string_view label) const;

  /// Mean Euclidean norm over every sense vector; the unit in which
  /// session noise levels are expressed.
  double scale() const noexcept { return scale_; }

 private:
  void refresh(const std::string& label);

  std::size_t dim_ = 0;
  std::map<std::string, std::vector<Sense>, std::less<>> entries_;
  std::map<std::string, Vec, std::less<>> surface_;
  double norm_sum_ = 0.0;
  std::size_t norm_count_ = 0;
  double scale_ = 0.0;
};

/// Splits "base#sense" into its parts; a label without '#' has an empty sense.
std::pair<std::string, std::string> split_sense_label(std::string_view label);

/// Builds the inventory from the store. Store rows "base#sense" are grouped
/// under "base"; plain rows become single-sense labels with id "".
///
/// The optional declaration text lists one "base#sense" row per line
/// (blank lines ignored). A declared base gets exactly its listed senses,
/// in listed order, and every listed row must exist in the store. Bases
/// that are not declared keep the grouping derived from the store.
SenseInventory build_inventory(const VectorStore& store, std::string_view declarations = {});
SenseInventory load_sense_inventory(const std::filesystem::path& path, const VectorStore& store);

/// Average of the surface vectors of every resolvable token. Unknown tokens
/// are skipped; throws EmptyUtteranceError when none resolve. The result
/// does not depend on token order.
Vec utterance_mean(std::span<const std::string> tokens, const SenseInventory& inventory);

}  // namespace ctxsense
