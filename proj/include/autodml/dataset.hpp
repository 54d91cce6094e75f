#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace autodml {

// Which columns play which role. Empty strings mean "not assigned".
struct ColumnRoles {
  std::string outcome;
  std::string treatment;
  std::string cluster;
};

// Column-role mapping for CSV ingestion. `columns` restricts the numeric
// columns that are kept; empty keeps every column of the file except the
// cluster column.
struct CsvSchema {
  ColumnRoles roles;
  std::vector<std::string> columns;
};

// Observation table. Values are stored row-major so that a row can be handed
// to the dictionary as a contiguous span. Immutable once built.
class Dataset {
 public:
  Dataset() = default;

  // `values` is row-major with names.size() columns. Rejects NaN/Inf.
  Dataset(std::vector<std::string> names, std::vector<double> values,
          std::vector<std::int64_t> cluster_ids = {}, ColumnRoles roles = {});

  static Dataset from_columns(const std::vector<std::string>& names,
                              const std::vector<std::vector<double>>& columns,
                              std::vector<std::int64_t> cluster_ids = {},
                              ColumnRoles roles = {});

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const ColumnRoles& roles() const { return roles_; }

  std::optional<std::size_t> find_column(const std::string& name) const;
  // Throws ValidationError("missing column ...").
  std::size_t column_index(const std::string& name) const;

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * names_.size(), names_.size()};
  }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * names_.size() + j]; }
  std::vector<double> column(std::size_t j) const;
  std::vector<double> column(const std::string& name) const { return column(column_index(name)); }

  std::size_t outcome_index() const;
  std::size_t treatment_index() const;
  double outcome(std::size_t i) const { return (*this)(i, outcome_index()); }

  bool has_clusters() const { return !cluster_ids_.empty(); }
  const std::vector<std::int64_t>& cluster_ids() const { return cluster_ids_; }
  std::size_t cluster_count() const;

  // Copy with an extra column appended (existing column indices unchanged).
  Dataset with_column(const std::string& name, const std::vector<double>& values) const;
  // Rows in the given order; duplicates allowed (bootstrap resampling).
  Dataset select_rows(std::span<const std::size_t> rows) const;
  Dataset with_roles(ColumnRoles roles) const;
  Dataset with_cluster_ids(std::vector<std::int64_t> ids) const;
  // Stable sort by cluster id, so each cluster's rows are contiguous.
  Dataset sorted_by_cluster() const;

 private:
  std::vector<std::string> names_;
  std::vector<double> values_;
  std::vector<std::int64_t> cluster_ids_;
  ColumnRoles roles_;
  std::size_t n_rows_ = 0;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
// Values are written in shortest round-trip form, so load_csv(write_csv(d)) == d bit for bit.
void write_csv(const Dataset& data, const std::filesystem::path& path);

// Parses RFC-4180 text into records of fields.
std::vector<std::vector<std::string>> parse_csv_text(const std::string& text);

// Fold assignment with 0-based fold indices.
struct FoldPlan {
  std::size_t folds = 0;
  std::vector<std::size_t> assignment;
  std::uint64_t seed = 0;

  std::vector<std::size_t> rows_in(std::size_t fold) const;
  std::vector<std::size_t> rows_not_in(std::size_t fold) const;
  // Rows in neither `a` nor `b`.
  std::vector<std::size_t> rows_not_in(std::size_t a, std::size_t b) const;
  std::size_t size_of(std::size_t fold) const;
};

// Units (clusters when present, else rows) are permuted with CounterRng(seed)
// and dealt round-robin over `folds`.
FoldPlan make_folds(const Dataset& data, std::size_t folds, std::uint64_t seed);

std::vector<std::size_t> all_rows(std::size_t n);

}  // namespace autodml
