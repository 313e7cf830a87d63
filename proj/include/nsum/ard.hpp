#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nsum {

struct GroupMeta {
  std::string id;
  std::string name;
  std::optional<double> known_size;
  bool has_respect_column = false;
};

/**
 * Raw ARD survey bundle: counts, respondent covariates, per-group respect
 * answers, group metadata, and the total population.  Missing entries are
 * NaN until listwise deletion runs.
 */
struct ArdDataset {
  Eigen::MatrixXd y;  // n x K counts, NaN = missing
  Eigen::MatrixXd z;  // n x p respondent covariates, NaN = missing
  Eigen::MatrixXd x;  // n x K respect answers; column meaningful only when flagged
  std::vector<GroupMeta> groups;
  std::vector<std::string> z_names;
  std::vector<std::string> respondent_ids;
  double total_population = 0.0;

  int n() const { return static_cast<int>(y.rows()); }
  int num_groups() const { return static_cast<int>(y.cols()); }
  int num_covariates() const { return static_cast<int>(z.cols()); }
  int group_index(const std::string& id) const;  // throws if unknown
  std::vector<int> known_group_indices() const;
};

struct MissingnessSummary {
  long rows_total = 0;
  long rows_dropped = 0;
  std::map<std::string, double> per_column_missing_pct;  // "y:<id>", "z:<var>", "x:<id>"
};

/// Which covariates enter the model and how.
struct CovariateSpec {
  std::vector<std::string> global_covariates;
  std::vector<std::string> group_covariates;
  std::vector<std::string> squared_terms;  // must appear in one of the lists above
};

/**
 * Model-ready design: complete count matrix plus centered covariates.
 * Continuous z columns are standardized with the post-deletion sample
 * moments, binary columns are centered, squared terms are built from the
 * standardized column and re-centered, and respect columns are centered per
 * group.
 */
struct PreparedDesign {
  Eigen::MatrixXd y;           // n x K, complete
  Eigen::MatrixXd z_centered;  // n x q (original + squared columns)
  Eigen::MatrixXd x_centered;  // n x K, zero where no respect column
  std::vector<std::string> z_col_names;
  std::vector<int> global_cov_idx;  // columns of z_centered
  std::vector<int> group_cov_idx;
  std::vector<bool> has_respect;       // per group
  std::vector<int> known_idx;          // groups with known size
  Eigen::VectorXd prevalence_known;    // N_k / N over known_idx
  std::vector<GroupMeta> groups;
  double total_population = 0.0;

  int n() const { return static_cast<int>(y.rows()); }
  int num_groups() const { return static_cast<int>(y.cols()); }
};

/// JSON config describing a dataset bundle (see README for the schema).
struct DatasetConfig {
  double total_population = 0.0;
  std::string ard_file;
  std::string groups_file;
  std::string covariates_file;  // optional
  std::string respect_file;     // optional
  CovariateSpec covariates;
  long truncation_cap = 150;
  std::vector<std::string> groups_to_use;  // empty = all
};

DatasetConfig parse_dataset_config(const std::string& config_path);
ArdDataset load_dataset(const std::string& config_path);
ArdDataset load_dataset(const DatasetConfig& cfg, const std::string& base_dir);

std::pair<ArdDataset, MissingnessSummary> listwise_delete(const ArdDataset& d);
ArdDataset truncate_responses(const ArdDataset& d, long cap);
PreparedDesign prepare_design(const ArdDataset& d, const CovariateSpec& spec);

// Design with no covariate columns at all (baseline models).
PreparedDesign prepare_design(const ArdDataset& d);

void write_dataset_csvs(const ArdDataset& d, const std::string& dir);

}  // namespace nsum
