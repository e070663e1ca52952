#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "soc2seq/error.hpp"
#include "soc2seq/util.hpp"

namespace soc2seq {

// Dense key -> vector table. Vectors are stored as columns of `vectors`
// (dim x count) so a lookup is a contiguous column.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(Eigen::Index dim, std::string level = {})
      : vectors_(dim, 0), level_(std::move(level)) {}

  Eigen::Index dim() const noexcept { return vectors_.rows(); }
  std::size_t size() const noexcept { return keys_.size(); }
  bool empty() const noexcept { return keys_.empty(); }
  const std::string& level() const noexcept { return level_; }
  void set_level(std::string level) { level_ = std::move(level); }

  const std::vector<std::string>& keys() const noexcept { return keys_; }
  const Eigen::MatrixXd& vectors() const noexcept { return vectors_; }
  Eigen::MatrixXd& vectors() noexcept { return vectors_; }

  std::optional<std::size_t> find(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& key) const { return index_.count(key) > 0; }

  Eigen::VectorXd at(const std::string& key) const {
    auto row = find(key);
    if (!row) throw InputError("no embedding for key '" + key + "'");
    return vectors_.col(static_cast<Eigen::Index>(*row));
  }

  std::size_t add(const std::string& key, const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() != dim()) throw InputError("embedding dimension mismatch for '" + key + "'");
    if (key.empty() || key.find_first_of(" \t\r\n") != std::string::npos) {
      throw InputError("embedding key must be non-empty without whitespace: '" + key + "'");
    }
    if (contains(key)) throw InputError("duplicate embedding key '" + key + "'");
    const auto row = keys_.size();
    keys_.push_back(key);
    index_.emplace(key, row);
    vectors_.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(keys_.size()));
    vectors_.col(static_cast<Eigen::Index>(row)) = v;
    return row;
  }

  Eigen::VectorXd mean() const {
    if (empty()) return Eigen::VectorXd::Zero(dim());
    return vectors_.rowwise().mean();
  }

  // Header "count dim" (plus " level" when tagged), then "key v1 ... vd".
  void save(const std::string& path) const {
    auto out = open_output(path);
    out << size() << ' ' << dim();
    if (!level_.empty()) out << ' ' << level_;
    out << '\n';
    for (std::size_t i = 0; i < size(); ++i) {
      out << keys_[i];
      for (Eigen::Index d = 0; d < dim(); ++d) {
        out << ' ' << format_double(vectors_(d, static_cast<Eigen::Index>(i)));
      }
      out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
  }

  static EmbeddingTable load(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw InputError("empty embedding file: " + path);
    const auto header = split_ws(lines[0]);
    if (header.size() < 2 || header.size() > 3) throw InputError("bad embedding header in " + path);
    const auto count = parse_int(header[0]);
    const auto dim = parse_int(header[1]);
    if (count < 0 || dim < 1) throw InputError("bad embedding header in " + path);
    EmbeddingTable t(dim, header.size() == 3 ? header[2] : std::string{});
    Eigen::VectorXd v(dim);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      const auto parts = split_ws(lines[i]);
      if (static_cast<long long>(parts.size()) != dim + 1) {
        throw InputError(path + ":" + std::to_string(i + 1) + ": expected " +
                         std::to_string(dim + 1) + " fields");
      }
      for (long long d = 0; d < dim; ++d) v(d) = parse_double(parts[static_cast<std::size_t>(d + 1)]);
      t.add(parts[0], v);
    }
    if (static_cast<long long>(t.size()) != count) throw InputError("row count mismatch in " + path);
    return t;
  }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.keys_ == b.keys_ && a.level_ == b.level_ && a.vectors_.rows() == b.vectors_.rows() &&
           a.vectors_.cols() == b.vectors_.cols() && a.vectors_ == b.vectors_;
  }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> index_;
  Eigen::MatrixXd vectors_;
  std::string level_;
};

}  // namespace soc2seq
