#include "ctxsense/vecstore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ctxsense/error.hpp"

namespace ctxsense {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t') ++end;
    if (end > pos) out.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void VectorStore::add(std::string label, Vec vector) {
  if (vector.size() != dim_) {
    throw LoadError("vector for '" + label + "' has " + std::to_string(vector.size()) +
                    " components, expected " + std::to_string(dim_));
  }
  for (double x : vector) {
    if (!std::isfinite(x)) throw LoadError("non-finite component in '" + label + "'");
  }
  if (!(norm(vector) > 0.0)) throw LoadError("zero vector for '" + label + "'");
  if (index_.count(label)) throw LoadError("duplicate label '" + label + "'");
  index_.emplace(label, labels_.size());
  labels_.push_back(std::move(label));
  vectors_.push_back(std::move(vector));
}

const Vec* VectorStore::find(std::string_view label) const {
  auto it = index_.find(std::string(label));
  return it == index_.end() ? nullptr : &vectors_[it->second];
}

std::string VectorStore::to_text() const {
  std::string out = std::to_string(size()) + " " + std::to_string(dim_) + "\n";
  char buf[64];
  for (std::size_t r = 0; r < size(); ++r) {
    out += labels_[r];
    for (double x : vectors_[r]) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
      out += ' ';
      out.append(buf, ptr);
    }
    out += '\n';
  }
  return out;
}

void VectorStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_text();
}

VectorStore parse_vectors(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = strip_cr(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw LoadError("empty embedding file", 1);
  auto header = split_spaces(line);
  std::size_t count = 0;
  std::size_t dim = 0;
  if (header.size() != 2 || !parse_number(header[0], count) || !parse_number(header[1], dim) ||
      dim == 0) {
    throw LoadError("malformed header, expected '<count> <dim>'", line_no);
  }

  VectorStore store(dim);
  while (next_line(line)) {
    if (line.empty()) continue;
    auto fields = split_spaces(line);
    if (fields.size() != dim + 1) {
      throw LoadError("expected " + std::to_string(dim) + " values, found " +
                          std::to_string(fields.empty() ? 0 : fields.size() - 1),
                      line_no);
    }
    Vec v(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (!parse_number(fields[i + 1], v[i])) {
        throw LoadError("bad number '" + std::string(fields[i + 1]) + "'", line_no);
      }
    }
    try {
      store.add(std::string(fields[0]), std::move(v));
    } catch (const LoadError& e) {
      throw LoadError(e.what(), line_no);
    }
  }
  if (store.size() != count) {
    throw LoadError("header declares " + std::to_string(count) + " rows, found " +
                    std::to_string(store.size()));
  }
  return store;
}

VectorStore load_vectors(const std::filesystem::path& path) { return parse_vectors(read_file(path)); }

std::pair<std::string, std::string> split_sense_label(std::string_view label) {
  auto hash = label.find('#');
  if (hash == std::string_view::npos) return {std::string(label), std::string()};
  return {std::string(label.substr(0, hash)), std::string(label.substr(hash + 1))};
}

void SenseInventory::add_sense(const std::string& label, std::string sense_id, Vec vector) {
  if (vector.size() != dim_) {
    throw LoadError("sense '" + label + "#" + sense_id + "' has wrong dimension");
  }
  auto& senses = entries_[label];
  for (const auto& s : senses) {
    if (s.id == sense_id) throw LoadError("duplicate sense '" + label + "#" + sense_id + "'");
  }
  norm_sum_ += norm(vector);
  ++norm_count_;
  scale_ = norm_sum_ / static_cast<double>(norm_count_);
  senses.push_back({std::move(sense_id), std::move(vector)});
  refresh(label);
}

void SenseInventory::refresh(const std::string& label) {
  const auto& senses = entries_.at(label);
  if (senses.size() == 1) {
    surface_[label] = senses.front().vector;
    return;
  }
  const double share = 1.0 / static_cast<double>(senses.size());
  Vec mean(dim_, 0.0);
  for (const auto& s : senses) {
    for (std::size_t i = 0; i < dim_; ++i) mean[i] += share * s.vector[i];
  }
  surface_[label] = std::move(mean);
}

SenseInventory SenseInventory::without_sense(const std::string& label,
                                             const std::string& sense_id) const {
  if (!find_sense(label, sense_id)) throw Error("no sense '" + label + "#" + sense_id + "'");
  if (senses(label).size() < 2) throw Error("cannot remove the only sense of '" + label + "'");
  SenseInventory out(dim_);
  for (const auto& [l, senses] : entries_) {
    for (const auto& s : senses) {
      if (l == label && s.id == sense_id) continue;
      out.add_sense(l, s.id, s.vector);
    }
  }
  return out;
}

bool SenseInventory::contains(std::string_view label) const { return entries_.find(label) != entries_.end(); }

bool SenseInventory::ambiguous(std::string_view label) const {
  auto it = entries_.find(label);
  return it != entries_.end() && it->second.size() > 1;
}

const std::vector<Sense>& SenseInventory::senses(std::string_view label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw Error("unknown label '" + std::string(label) + "'");
  return it->second;
}

const Sense* SenseInventory::find_sense(std::string_view label, std::string_view sense_id) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) return nullptr;
  for (const auto& s : it->second) {
    if (s.id == sense_id) return &s;
  }
  return nullptr;
}

const Vec* SenseInventory::surface_vector(std::string_view label) const {
  auto it = surface_.find(label);
  return it == surface_.end() ? nullptr : &it->second;
}

SenseInventory build_inventory(const VectorStore& store, std::string_view declarations) {
  std::map<std::string, std::vector<std::string>> declared;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < declarations.size()) {
    std::size_t end = declarations.find('\n', pos);
    if (end == std::string_view::npos) end = declarations.size();
    auto line = strip_cr(declarations.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    auto fields = split_spaces(line);
    if (fields.empty()) continue;
    if (fields.size() != 1) throw LoadError("expected a single 'label#sense' per line", line_no);
    if (!store.find(fields[0])) {
      throw LoadError("no vector for '" + std::string(fields[0]) + "'", line_no);
    }
    auto [base, sense] = split_sense_label(fields[0]);
    if (base.empty()) throw LoadError("empty label", line_no);
    if (fields[0].find('#') != std::string_view::npos && sense.empty()) {
      throw LoadError("label '" + base + "' declares no sense", line_no);
    }
    auto& list = declared[base];
    if (std::find(list.begin(), list.end(), std::string(fields[0])) != list.end()) {
      throw LoadError("duplicate declaration '" + std::string(fields[0]) + "'", line_no);
    }
    list.emplace_back(fields[0]);
  }

  SenseInventory inv(store.dim());
  for (const auto& [base, rows] : declared) {
    for (const auto& row : rows) inv.add_sense(base, split_sense_label(row).second, *store.find(row));
  }

  // Undeclared bases: sense rows win over a plain surface row of the same base.
  std::map<std::string, std::vector<std::size_t>> grouped;
  for (std::size_t r = 0; r < store.size(); ++r) {
    auto base = split_sense_label(store.labels()[r]).first;
    if (declared.count(base)) continue;
    grouped[base].push_back(r);
  }
  for (const auto& [base, rows] : grouped) {
    bool has_senses = std::any_of(rows.begin(), rows.end(), [&](std::size_t r) {
      return store.labels()[r].find('#') != std::string::npos;
    });
    for (std::size_t r : rows) {
      auto [b, sense] = split_sense_label(store.labels()[r]);
      bool is_sense_row = store.labels()[r].find('#') != std::string::npos;
      if (has_senses && !is_sense_row) continue;
      if (is_sense_row && sense.empty()) {
        throw LoadError("label '" + base + "' has an empty sense id");
      }
      inv.add_sense(base, sense, store.vector_at(r));
    }
  }
  for (const auto& [label, senses] : inv.entries()) {
    if (senses.empty()) throw LoadError("label '" + label + "' has no senses");
  }
  return inv;
}

SenseInventory load_sense_inventory(const std::filesystem::path& path, const VectorStore& store) {
  return build_inventory(store, read_file(path));
}

Vec utterance_mean(std::span<const std::string> tokens, const SenseInventory& inventory) {
  // Weighted by multiplicity over sorted distinct labels: exact for repeated
  // tokens and independent of order.
  std::map<std::string_view, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& tok : tokens) {
    if (inventory.surface_vector(tok)) {
      ++counts[tok];
      ++total;
    }
  }
  if (total == 0) throw EmptyUtteranceError("utterance has no known tokens");

  Vec mean(inventory.dim(), 0.0);
  for (const auto& [label, count] : counts) {
    const Vec& v = *inventory.surface_vector(label);
    const double share = static_cast<double>(count) / static_cast<double>(total);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += share * v[i];
  }
  return mean;
}

}  // namespace ctxsense
