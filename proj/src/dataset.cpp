#include "autodml/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "autodml/error.hpp"
#include "autodml/rng.hpp"

namespace autodml {

Dataset::Dataset(std::vector<std::string> names, std::vector<double> values,
                 std::vector<std::int64_t> cluster_ids, ColumnRoles roles)
    : names_(std::move(names)),
      values_(std::move(values)),
      cluster_ids_(std::move(cluster_ids)),
      roles_(std::move(roles)) {
  if (names_.empty()) {
    if (!values_.empty()) throw ValidationError("dataset has values but no columns");
    n_rows_ = cluster_ids_.size();
    return;
  }
  if (values_.size() % names_.size() != 0) throw ValidationError("ragged dataset");
  n_rows_ = values_.size() / names_.size();
  if (!cluster_ids_.empty() && cluster_ids_.size() != n_rows_)
    throw ValidationError("cluster id column length differs from row count");
  std::set<std::string> seen;
  for (const auto& name : names_) {
    if (!seen.insert(name).second) throw ValidationError("duplicate column '" + name + "'");
  }
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (!std::isfinite(values_[k])) {
      throw ValidationError("non-finite value at row " + std::to_string(k / names_.size() + 1) +
                            ", column " + names_[k % names_.size()]);
    }
  }
  for (const auto* role : {&roles_.outcome, &roles_.treatment}) {
    if (!role->empty()) column_index(*role);
  }
}

Dataset Dataset::from_columns(const std::vector<std::string>& names,
                              const std::vector<std::vector<double>>& columns,
                              std::vector<std::int64_t> cluster_ids, ColumnRoles roles) {
  if (names.size() != columns.size()) throw ValidationError("column name/data count mismatch");
  const std::size_t n = columns.empty() ? 0 : columns.front().size();
  std::vector<double> values(n * names.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].size() != n) throw ValidationError("column '" + names[j] + "' has wrong length");
    for (std::size_t i = 0; i < n; ++i) values[i * names.size() + j] = columns[j][i];
  }
  return Dataset(names, std::move(values), std::move(cluster_ids), std::move(roles));
}

std::optional<std::size_t> Dataset::find_column(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t Dataset::column_index(const std::string& name) const {
  if (auto j = find_column(name)) return *j;
  throw ValidationError("missing column '" + name + "'");
}

std::vector<double> Dataset::column(std::size_t j) const {
  std::vector<double> out(n_rows_);
  for (std::size_t i = 0; i < n_rows_; ++i) out[i] = (*this)(i, j);
  return out;
}

std::size_t Dataset::outcome_index() const {
  if (roles_.outcome.empty()) throw ValidationError("dataset has no outcome column assigned");
  return column_index(roles_.outcome);
}

std::size_t Dataset::treatment_index() const {
  if (roles_.treatment.empty()) throw ValidationError("dataset has no treatment column assigned");
  return column_index(roles_.treatment);
}

std::size_t Dataset::cluster_count() const {
  if (!has_clusters()) return n_rows_;
  return std::set<std::int64_t>(cluster_ids_.begin(), cluster_ids_.end()).size();
}

Dataset Dataset::with_column(const std::string& name, const std::vector<double>& values) const {
  if (values.size() != n_rows_) throw ValidationError("column '" + name + "' has wrong length");
  auto names = names_;
  names.push_back(name);
  std::vector<double> out;
  out.reserve(n_rows_ * names.size());
  for (std::size_t i = 0; i < n_rows_; ++i) {
    const auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
    out.push_back(values[i]);
  }
  return Dataset(std::move(names), std::move(out), cluster_ids_, roles_);
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  std::vector<double> out;
  out.reserve(rows.size() * names_.size());
  std::vector<std::int64_t> ids;
  for (const auto i : rows) {
    if (i >= n_rows_) throw ValidationError("row index out of range");
    const auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
    if (has_clusters()) ids.push_back(cluster_ids_[i]);
  }
  return Dataset(names_, std::move(out), std::move(ids), roles_);
}

Dataset Dataset::with_roles(ColumnRoles roles) const {
  return Dataset(names_, values_, cluster_ids_, std::move(roles));
}

Dataset Dataset::with_cluster_ids(std::vector<std::int64_t> ids) const {
  return Dataset(names_, values_, std::move(ids), roles_);
}

Dataset Dataset::sorted_by_cluster() const {
  std::vector<std::size_t> order(n_rows_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (has_clusters()) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return cluster_ids_[a] < cluster_ids_[b];
    });
  }
  return select_rows(order);
}

std::vector<std::vector<std::string>> parse_csv_text(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // Skip fully blank lines.
    if (!(record.size() == 1 && record.front().empty())) records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (in_quotes) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field.push_back('"');
          ++k;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started || !field.empty()) throw ValidationError("malformed quoted CSV field");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (k + 1 < text.size() && text[k + 1] == '\n') ++k;
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw ValidationError("unterminated quoted CSV field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_real(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (text.starts_with("\xEF\xBB\xBF")) text.erase(0, 3);
  const auto records = parse_csv_text(text);
  if (records.empty()) throw ValidationError("empty file '" + path.string() + "'");

  std::vector<std::string> header;
  for (const auto& h : records.front()) header.push_back(trim(h));
  auto header_index = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("missing column '" + name + "' in '" + path.string() + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::string> keep = schema.columns;
  if (keep.empty()) {
    for (const auto& h : header)
      if (h != schema.roles.cluster) keep.push_back(h);
  }
  for (const auto* role : {&schema.roles.outcome, &schema.roles.treatment}) {
    if (!role->empty() && std::find(keep.begin(), keep.end(), *role) == keep.end()) keep.push_back(*role);
  }
  std::vector<std::size_t> source;
  for (const auto& name : keep) source.push_back(header_index(name));
  std::optional<std::size_t> cluster_source;
  if (!schema.roles.cluster.empty()) cluster_source = header_index(schema.roles.cluster);

  const std::size_t n = records.size() - 1;
  if (n == 0) throw ValidationError("empty file '" + path.string() + "': header only");
  std::vector<double> values;
  values.reserve(n * keep.size());
  std::vector<std::string> labels;
  for (std::size_t r = 1; r <= n; ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw ValidationError("row " + std::to_string(r) + " has " + std::to_string(rec.size()) +
                            " fields, header has " + std::to_string(header.size()));
    }
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const auto v = parse_real(rec[source[k]]);
      if (!v) {
        throw ValidationError("non-numeric cell at row " + std::to_string(r) + ", column " + keep[k]);
      }
      values.push_back(*v);
    }
    if (cluster_source) {
      std::string label = trim(rec[*cluster_source]);
      if (label.empty()) {
        throw ValidationError("blank cluster id at row " + std::to_string(r) + ", column " + schema.roles.cluster);
      }
      labels.push_back(std::move(label));
    }
  }
  // Integer labels are kept; any other label set is coded by first appearance.
  bool integral = true;
  for (const auto& label : labels) {
    const auto v = parse_real(label);
    if (!v || *v != std::floor(*v) || std::abs(*v) > 9.0e15) {
      integral = false;
      break;
    }
  }
  std::vector<std::int64_t> ids;
  ids.reserve(labels.size());
  std::map<std::string, std::int64_t> codes;
  for (const auto& label : labels) {
    if (integral) {
      ids.push_back(static_cast<std::int64_t>(*parse_real(label)));
    } else {
      ids.push_back(codes.emplace(label, static_cast<std::int64_t>(codes.size())).first->second);
    }
  }
  return Dataset(std::move(keep), std::move(values), std::move(ids), schema.roles);
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const bool clusters = data.has_clusters();
  const std::string cluster_name = data.roles().cluster.empty() ? "cluster" : data.roles().cluster;
  for (std::size_t j = 0; j < data.n_cols(); ++j) out << (j ? "," : "") << data.names()[j];
  if (clusters) out << (data.n_cols() ? "," : "") << cluster_name;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    for (std::size_t j = 0; j < data.n_cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, data(i, j));
      out << (j ? "," : "") << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    if (clusters) out << (data.n_cols() ? "," : "") << data.cluster_ids()[i];
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<std::size_t> FoldPlan::rows_in(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> FoldPlan::rows_not_in(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != fold) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> FoldPlan::rows_not_in(std::size_t a, std::size_t b) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != a && assignment[i] != b) rows.push_back(i);
  return rows;
}

std::size_t FoldPlan::size_of(std::size_t fold) const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), fold));
}

FoldPlan make_folds(const Dataset& data, std::size_t folds, std::uint64_t seed) {
  const std::size_t units = data.has_clusters() ? data.cluster_count() : data.n_rows();
  if (folds < 2 || folds > units) {
    throw ValidationError("fold count " + std::to_string(folds) + " out of range [2, " +
                          std::to_string(units) + "]");
  }
  // Unit u is the u-th smallest cluster id (or row u).
  std::vector<std::size_t> unit_of_row(data.n_rows());
  if (data.has_clusters()) {
    std::map<std::int64_t, std::size_t> rank;
    for (const auto id : data.cluster_ids()) rank.emplace(id, 0);
    std::size_t k = 0;
    for (auto& [id, r] : rank) r = k++;
    for (std::size_t i = 0; i < data.n_rows(); ++i) unit_of_row[i] = rank.at(data.cluster_ids()[i]);
  } else {
    std::iota(unit_of_row.begin(), unit_of_row.end(), std::size_t{0});
  }
  CounterRng rng(seed);
  const auto perm = random_permutation(units, rng);
  std::vector<std::size_t> fold_of_unit(units);
  for (std::size_t k = 0; k < units; ++k) fold_of_unit[perm[k]] = k % folds;

  FoldPlan plan;
  plan.folds = folds;
  plan.seed = seed;
  plan.assignment.resize(data.n_rows());
  for (std::size_t i = 0; i < data.n_rows(); ++i) plan.assignment[i] = fold_of_unit[unit_of_row[i]];
  return plan;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace autodml
