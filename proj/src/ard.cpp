#include "nsum/ard.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nsum/csv.hpp"

namespace nsum {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV plumbing

int CsvTable::col(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

bool csv_cell_missing(const std::string& cell) { return cell.empty() || cell == "NA"; }

namespace {

std::vector<std::string> split_csv_line(const std::string& line, const std::string& path,
                                        std::size_t lineno) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) {
    std::ostringstream msg;
    msg << path << ":" << lineno << ": unterminated quoted field";
    throw std::runtime_error(msg.str());
  }
  out.push_back(field);
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("file not found: " + path);
  CsvTable t;
  t.path = path;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      t.header = split_csv_line(line, path, lineno);
      continue;
    }
    if (line.empty()) continue;
    auto row = split_csv_line(line, path, lineno);
    if (row.size() != t.header.size()) {
      std::ostringstream msg;
      msg << path << ":" << lineno << ": expected " << t.header.size() << " fields, got "
          << row.size();
      throw std::runtime_error(msg.str());
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw std::runtime_error(path + ": empty file");
  return t;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  auto emit = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const std::string& f = fields[i];
      if (i) out << ',';
      if (f.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char c : f) {
          if (c == '"') out << "\"\"";
          else out << c;
        }
        out << '"';
      } else {
        out << f;
      }
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
}

// ---------------------------------------------------------------------------
// Dataset assembly

int ArdDataset::group_index(const std::string& id) const {
  for (std::size_t k = 0; k < groups.size(); ++k)
    if (groups[k].id == id) return static_cast<int>(k);
  throw std::invalid_argument("unknown group id: " + id);
}

std::vector<int> ArdDataset::known_group_indices() const {
  std::vector<int> idx;
  for (std::size_t k = 0; k < groups.size(); ++k)
    if (groups[k].known_size) idx.push_back(static_cast<int>(k));
  return idx;
}

namespace {

double parse_count_cell(const std::string& cell, const std::string& path, std::size_t row,
                        const std::string& col) {
  if (csv_cell_missing(cell)) return std::nan("");
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  std::ostringstream where;
  where << path << ": row " << row << ", column " << col;
  if (pos != cell.size())
    throw std::runtime_error(where.str() + ": non-integer count '" + cell + "'");
  if (v < 0.0) throw std::runtime_error(where.str() + ": negative count '" + cell + "'");
  if (v != std::floor(v))
    throw std::runtime_error(where.str() + ": non-integer count '" + cell + "'");
  return v;
}

double parse_real_cell(const std::string& cell, const std::string& path, std::size_t row,
                       const std::string& col) {
  if (csv_cell_missing(cell)) return std::nan("");
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != cell.size()) {
    std::ostringstream msg;
    msg << path << ": row " << row << ", column " << col << ": non-numeric value '" << cell
        << "'";
    throw std::runtime_error(msg.str());
  }
  return v;
}

std::string resolve(const std::string& base_dir, const std::string& file) {
  fs::path p(file);
  if (p.is_absolute() || base_dir.empty()) return file;
  return (fs::path(base_dir) / p).string();
}

}  // namespace

DatasetConfig parse_dataset_config(const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("file not found: " + config_path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(config_path + ": invalid JSON: " + e.what());
  }
  DatasetConfig cfg;
  if (!j.contains("total_population"))
    throw std::runtime_error(config_path + ": missing required key 'total_population'");
  cfg.total_population = j.at("total_population").get<double>();
  if (!(cfg.total_population > 0.0))
    throw std::runtime_error(config_path + ": total_population must be positive");
  const json& files = j.at("files");
  cfg.ard_file = files.at("ard").get<std::string>();
  cfg.groups_file = files.at("groups").get<std::string>();
  if (files.contains("covariates")) cfg.covariates_file = files.at("covariates").get<std::string>();
  if (files.contains("respect")) cfg.respect_file = files.at("respect").get<std::string>();
  auto get_list = [&j](const char* key) {
    std::vector<std::string> v;
    if (j.contains(key)) v = j.at(key).get<std::vector<std::string>>();
    return v;
  };
  cfg.covariates.global_covariates = get_list("global_covariates");
  cfg.covariates.group_covariates = get_list("group_covariates");
  cfg.covariates.squared_terms = get_list("squared_terms");
  if (j.contains("truncation_cap")) cfg.truncation_cap = j.at("truncation_cap").get<long>();
  cfg.groups_to_use = get_list("groups_to_use");
  return cfg;
}

ArdDataset load_dataset(const std::string& config_path) {
  const DatasetConfig cfg = parse_dataset_config(config_path);
  return load_dataset(cfg, fs::path(config_path).parent_path().string());
}

ArdDataset load_dataset(const DatasetConfig& cfg, const std::string& base_dir) {
  ArdDataset d;
  d.total_population = cfg.total_population;

  // groups.csv: group_id,name,known_size
  const CsvTable gt = read_csv(resolve(base_dir, cfg.groups_file));
  const int gid_col = gt.col("group_id"), gname_col = gt.col("name"),
            gsize_col = gt.col("known_size");
  if (gid_col < 0 || gname_col < 0 || gsize_col < 0)
    throw std::runtime_error(gt.path + ": header must contain group_id,name,known_size");
  std::vector<GroupMeta> all_groups;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < gt.rows.size(); ++r) {
    GroupMeta g;
    g.id = gt.rows[r][static_cast<std::size_t>(gid_col)];
    g.name = gt.rows[r][static_cast<std::size_t>(gname_col)];
    if (!seen.insert(g.id).second)
      throw std::runtime_error(gt.path + ": duplicate group id '" + g.id + "'");
    const std::string& size_cell = gt.rows[r][static_cast<std::size_t>(gsize_col)];
    if (!csv_cell_missing(size_cell)) {
      const double s = parse_real_cell(size_cell, gt.path, r + 2, "known_size");
      if (!(s > 0.0))
        throw std::runtime_error(gt.path + ": known_size must be positive for group '" + g.id + "'");
      if (s >= d.total_population)
        throw std::runtime_error(gt.path + ": known size exceeds population for group '" + g.id + "'");
      g.known_size = s;
    }
    all_groups.push_back(std::move(g));
  }

  // restrict/order by groups_to_use when given
  if (!cfg.groups_to_use.empty()) {
    std::vector<GroupMeta> picked;
    for (const std::string& id : cfg.groups_to_use) {
      auto it = std::find_if(all_groups.begin(), all_groups.end(),
                             [&id](const GroupMeta& g) { return g.id == id; });
      if (it == all_groups.end())
        throw std::runtime_error("groups_to_use references unknown group '" + id + "'");
      picked.push_back(*it);
    }
    all_groups = std::move(picked);
  }
  d.groups = all_groups;
  const int K = static_cast<int>(d.groups.size());
  if (K == 0) throw std::runtime_error(gt.path + ": no groups defined");

  // ard.csv: respondent_id,<group_id>...
  const CsvTable at = read_csv(resolve(base_dir, cfg.ard_file));
  if (at.col("respondent_id") != 0)
    throw std::runtime_error(at.path + ": first column must be respondent_id");
  std::vector<int> ard_cols(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const int c = at.col(d.groups[static_cast<std::size_t>(k)].id);
    if (c < 0)
      throw std::runtime_error(at.path + ": missing column for group '" +
                               d.groups[static_cast<std::size_t>(k)].id + "'");
    ard_cols[static_cast<std::size_t>(k)] = c;
  }
  const int n = static_cast<int>(at.rows.size());
  if (n == 0) throw std::runtime_error(at.path + ": no respondents");
  d.y.resize(n, K);
  d.respondent_ids.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& row = at.rows[static_cast<std::size_t>(i)];
    d.respondent_ids[static_cast<std::size_t>(i)] = row[0];
    for (int k = 0; k < K; ++k)
      d.y(i, k) = parse_count_cell(row[static_cast<std::size_t>(ard_cols[static_cast<std::size_t>(k)])],
                                   at.path, static_cast<std::size_t>(i) + 2,
                                   d.groups[static_cast<std::size_t>(k)].id);
  }

  // covariates.csv: respondent_id,<var>...
  if (!cfg.covariates_file.empty()) {
    const CsvTable ct = read_csv(resolve(base_dir, cfg.covariates_file));
    if (ct.col("respondent_id") != 0)
      throw std::runtime_error(ct.path + ": first column must be respondent_id");
    if (static_cast<int>(ct.rows.size()) != n)
      throw std::runtime_error(ct.path + ": row count does not match " + at.path);
    const int p = static_cast<int>(ct.header.size()) - 1;
    d.z.resize(n, p);
    d.z_names.assign(ct.header.begin() + 1, ct.header.end());
    for (int i = 0; i < n; ++i) {
      const auto& row = ct.rows[static_cast<std::size_t>(i)];
      if (row[0] != d.respondent_ids[static_cast<std::size_t>(i)])
        throw std::runtime_error(ct.path + ": respondent_id mismatch at data row " +
                                 std::to_string(i + 1));
      for (int jcol = 0; jcol < p; ++jcol)
        d.z(i, jcol) = parse_real_cell(row[static_cast<std::size_t>(jcol) + 1], ct.path,
                                       static_cast<std::size_t>(i) + 2,
                                       d.z_names[static_cast<std::size_t>(jcol)]);
    }
  } else {
    d.z.resize(n, 0);
  }

  // respect.csv: respondent_id,<group_id>... (columns may be absent per group)
  d.x = Eigen::MatrixXd::Zero(n, K);
  if (!cfg.respect_file.empty()) {
    const CsvTable rt = read_csv(resolve(base_dir, cfg.respect_file));
    if (rt.col("respondent_id") != 0)
      throw std::runtime_error(rt.path + ": first column must be respondent_id");
    if (static_cast<int>(rt.rows.size()) != n)
      throw std::runtime_error(rt.path + ": row count does not match " + at.path);
    for (int k = 0; k < K; ++k) {
      const int c = rt.col(d.groups[static_cast<std::size_t>(k)].id);
      if (c < 0) continue;
      d.groups[static_cast<std::size_t>(k)].has_respect_column = true;
      for (int i = 0; i < n; ++i)
        d.x(i, k) = parse_real_cell(rt.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)],
                                    rt.path, static_cast<std::size_t>(i) + 2,
                                    d.groups[static_cast<std::size_t>(k)].id);
    }
  }

  return d;
}

// ---------------------------------------------------------------------------
// Cleaning

std::pair<ArdDataset, MissingnessSummary> listwise_delete(const ArdDataset& d) {
  const int n = d.n(), K = d.num_groups(), p = d.num_covariates();
  MissingnessSummary s;
  s.rows_total = n;

  auto col_key_y = [&d](int k) { return "y:" + d.groups[static_cast<std::size_t>(k)].id; };
  auto col_key_z = [&d](int j) {
    return "z:" + (j < static_cast<int>(d.z_names.size()) ? d.z_names[static_cast<std::size_t>(j)]
                                                          : std::to_string(j));
  };
  auto col_key_x = [&d](int k) { return "x:" + d.groups[static_cast<std::size_t>(k)].id; };

  std::vector<bool> keep(static_cast<std::size_t>(n), true);
  std::map<std::string, long> miss_count;
  for (int k = 0; k < K; ++k) miss_count[col_key_y(k)] = 0;
  for (int j = 0; j < p; ++j) miss_count[col_key_z(j)] = 0;
  for (int k = 0; k < K; ++k)
    if (d.groups[static_cast<std::size_t>(k)].has_respect_column) miss_count[col_key_x(k)] = 0;

  for (int i = 0; i < n; ++i) {
    bool any = false;
    for (int k = 0; k < K; ++k)
      if (std::isnan(d.y(i, k))) {
        ++miss_count[col_key_y(k)];
        any = true;
      }
    for (int j = 0; j < p; ++j)
      if (std::isnan(d.z(i, j))) {
        ++miss_count[col_key_z(j)];
        any = true;
      }
    for (int k = 0; k < K; ++k)
      if (d.groups[static_cast<std::size_t>(k)].has_respect_column && std::isnan(d.x(i, k))) {
        ++miss_count[col_key_x(k)];
        any = true;
      }
    if (any) keep[static_cast<std::size_t>(i)] = false;
  }

  long kept = 0;
  for (int i = 0; i < n; ++i)
    if (keep[static_cast<std::size_t>(i)]) ++kept;
  s.rows_dropped = n - kept;
  for (const auto& [key, cnt] : miss_count)
    s.per_column_missing_pct[key] = 100.0 * static_cast<double>(cnt) / static_cast<double>(n);

  if (kept == 0) throw std::runtime_error("listwise_delete: empty dataset after deletion");

  ArdDataset out;
  out.groups = d.groups;
  out.z_names = d.z_names;
  out.total_population = d.total_population;
  out.y.resize(kept, K);
  out.z.resize(kept, p);
  out.x.resize(kept, K);
  out.respondent_ids.reserve(static_cast<std::size_t>(kept));
  long r = 0;
  for (int i = 0; i < n; ++i) {
    if (!keep[static_cast<std::size_t>(i)]) continue;
    out.y.row(r) = d.y.row(i);
    if (p > 0) out.z.row(r) = d.z.row(i);
    out.x.row(r) = d.x.row(i);
    if (!d.respondent_ids.empty())
      out.respondent_ids.push_back(d.respondent_ids[static_cast<std::size_t>(i)]);
    ++r;
  }
  return {std::move(out), std::move(s)};
}

ArdDataset truncate_responses(const ArdDataset& d, long cap) {
  if (cap < 1) throw std::invalid_argument("truncate_responses: cap must be >= 1");
  ArdDataset out = d;
  const double c = static_cast<double>(cap);
  for (int i = 0; i < out.n(); ++i)
    for (int k = 0; k < out.num_groups(); ++k)
      if (!std::isnan(out.y(i, k)) && out.y(i, k) > c) out.y(i, k) = c;
  return out;
}

// ---------------------------------------------------------------------------
// Design preparation

namespace {

int find_z_col(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return static_cast<int>(j);
  throw std::invalid_argument("prepare_design: unknown covariate '" + name + "'");
}

long distinct_count(const Eigen::VectorXd& v) {
  std::vector<double> vals(v.data(), v.data() + v.size());
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  return static_cast<long>(vals.size());
}

}  // namespace

PreparedDesign prepare_design(const ArdDataset& d) { return prepare_design(d, CovariateSpec{}); }

PreparedDesign prepare_design(const ArdDataset& d, const CovariateSpec& spec) {
  const int n = d.n(), K = d.num_groups();
  if (d.y.hasNaN()) throw std::invalid_argument("prepare_design: dataset has missing counts");

  PreparedDesign out;
  out.y = d.y;
  out.groups = d.groups;
  out.total_population = d.total_population;

  // z columns requested by the spec, in (global..., group...) order
  std::vector<std::pair<std::string, bool>> requested;  // name, is_global
  for (const auto& name : spec.global_covariates) requested.emplace_back(name, true);
  for (const auto& name : spec.group_covariates) requested.emplace_back(name, false);
  {
    std::set<std::string> globals(spec.global_covariates.begin(), spec.global_covariates.end());
    for (const auto& name : spec.group_covariates)
      if (globals.count(name))
        throw std::invalid_argument("prepare_design: covariate '" + name +
                                    "' listed as both global and group-specific");
  }

  std::vector<Eigen::VectorXd> cols;
  std::vector<std::string> col_names;
  std::vector<bool> col_global;
  for (const auto& [name, is_global] : requested) {
    const int j = find_z_col(d.z_names, name);
    Eigen::VectorXd v = d.z.col(j);
    if (v.hasNaN()) throw std::invalid_argument("prepare_design: missing values in covariate '" + name + "'");
    const long distinct = distinct_count(v);
    if (distinct <= 1) throw std::invalid_argument("prepare_design: zero variance column '" + name + "'");
    const double mean = v.mean();
    v.array() -= mean;
    if (distinct > 2) {
      const double sd = std::sqrt(v.squaredNorm() / static_cast<double>(n - 1));
      if (!(sd > 0.0)) throw std::invalid_argument("prepare_design: zero variance column '" + name + "'");
      v /= sd;
    }
    cols.push_back(v);
    col_names.push_back(name);
    col_global.push_back(is_global);
  }

  // squared terms from the standardized column, then re-centered
  for (const auto& name : spec.squared_terms) {
    int base = -1;
    for (std::size_t j = 0; j < col_names.size(); ++j)
      if (col_names[j] == name) base = static_cast<int>(j);
    if (base < 0)
      throw std::invalid_argument("prepare_design: squared term '" + name +
                                  "' is not a listed covariate");
    Eigen::VectorXd sq = cols[static_cast<std::size_t>(base)].array().square();
    sq.array() -= sq.mean();
    cols.push_back(sq);
    col_names.push_back(name + "_sq");
    col_global.push_back(col_global[static_cast<std::size_t>(base)]);
  }

  const int q = static_cast<int>(cols.size());
  out.z_centered.resize(n, q);
  for (int j = 0; j < q; ++j) out.z_centered.col(j) = cols[static_cast<std::size_t>(j)];
  out.z_col_names = col_names;
  for (int j = 0; j < q; ++j) {
    if (col_global[static_cast<std::size_t>(j)]) out.global_cov_idx.push_back(j);
    else out.group_cov_idx.push_back(j);
  }

  // respect columns, centered within each group that has one
  out.x_centered = Eigen::MatrixXd::Zero(n, K);
  out.has_respect.resize(static_cast<std::size_t>(K), false);
  for (int k = 0; k < K; ++k) {
    if (!d.groups[static_cast<std::size_t>(k)].has_respect_column) continue;
    Eigen::VectorXd v = d.x.col(k);
    if (v.hasNaN())
      throw std::invalid_argument("prepare_design: missing values in respect column for group '" +
                                  d.groups[static_cast<std::size_t>(k)].id + "'");
    v.array() -= v.mean();
    out.x_centered.col(k) = v;
    out.has_respect[static_cast<std::size_t>(k)] = true;
  }

  for (int k = 0; k < K; ++k)
    if (d.groups[static_cast<std::size_t>(k)].known_size) out.known_idx.push_back(k);
  out.prevalence_known.resize(static_cast<long>(out.known_idx.size()));
  for (std::size_t j = 0; j < out.known_idx.size(); ++j)
    out.prevalence_known(static_cast<long>(j)) =
        *d.groups[static_cast<std::size_t>(out.known_idx[j])].known_size / d.total_population;

  return out;
}

void write_dataset_csvs(const ArdDataset& d, const std::string& dir) {
  fs::create_directories(dir);
  const int n = d.n(), K = d.num_groups(), p = d.num_covariates();

  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string();
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  auto rid = [&d](int i) {
    return d.respondent_ids.empty() ? "r" + std::to_string(i + 1)
                                    : d.respondent_ids[static_cast<std::size_t>(i)];
  };

  {
    std::vector<std::string> header{"respondent_id"};
    for (const auto& g : d.groups) header.push_back(g.id);
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> row{rid(i)};
      for (int k = 0; k < K; ++k)
        row.push_back(std::isnan(d.y(i, k)) ? ""
                                            : std::to_string(static_cast<long>(d.y(i, k))));
      rows.push_back(std::move(row));
    }
    write_csv((fs::path(dir) / "ard.csv").string(), header, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& g : d.groups) {
      rows.push_back({g.id, g.name, g.known_size ? fmt(*g.known_size) : ""});
    }
    write_csv((fs::path(dir) / "groups.csv").string(), {"group_id", "name", "known_size"}, rows);
  }
  if (p > 0) {
    std::vector<std::string> header{"respondent_id"};
    for (const auto& name : d.z_names) header.push_back(name);
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> row{rid(i)};
      for (int j = 0; j < p; ++j) row.push_back(fmt(d.z(i, j)));
      rows.push_back(std::move(row));
    }
    write_csv((fs::path(dir) / "covariates.csv").string(), header, rows);
  }
  bool any_respect = false;
  for (const auto& g : d.groups) any_respect |= g.has_respect_column;
  if (any_respect) {
    std::vector<std::string> header{"respondent_id"};
    for (const auto& g : d.groups)
      if (g.has_respect_column) header.push_back(g.id);
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> row{rid(i)};
      for (int k = 0; k < K; ++k)
        if (d.groups[static_cast<std::size_t>(k)].has_respect_column)
          row.push_back(fmt(d.x(i, k)));
      rows.push_back(std::move(row));
    }
    write_csv((fs::path(dir) / "respect.csv").string(), header, rows);
  }
}

}  // namespace nsum
