#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fpfl/common.hpp"
#include "fpfl/nn.hpp"

namespace fpfl {

// Binary rule turning a raw column value into the sensitive bit.
struct SensitiveRule {
  enum class Kind { kEquals, kRange } kind = Kind::kEquals;
  std::string equals_value;  // bit = 1 when the cell equals this string
  double range_lo = 0.0;     // bit = 1 when lo <= numeric value <= hi
  double range_hi = 0.0;
};

struct ColumnSpec {
  enum class Kind { kNumeric, kCategorical, kLabel, kSensitive } kind =
      Kind::kNumeric;
  std::string name;
  std::vector<std::string> categories;   // categorical: fixed one-hot order
  std::string positive_value;            // label: value mapped to y = 1
  SensitiveRule rule;                    // sensitive only
  bool include_in_features = true;       // sensitive column may be excluded
};

// Column-by-column description of a CSV file. Rows with missing markers or
// out-of-vocabulary categories are dropped.
struct DatasetSchema {
  std::vector<ColumnSpec> columns;
  char delimiter = ',';
  bool has_header = true;
  std::vector<std::string> missing_markers = {"?", ""};

  static DatasetSchema from_json(const nlohmann::json& j);
  static DatasetSchema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("schema: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

inline DatasetSchema DatasetSchema::from_json(const nlohmann::json& j) {
  DatasetSchema s;
  if (j.contains("delimiter")) {
    std::string d = j.at("delimiter").get<std::string>();
    if (d.size() != 1) throw std::invalid_argument("schema: bad delimiter");
    s.delimiter = d[0];
  }
  if (j.contains("has_header")) s.has_header = j.at("has_header").get<bool>();
  if (j.contains("missing_markers"))
    s.missing_markers =
        j.at("missing_markers").get<std::vector<std::string>>();
  for (const auto& jc : j.at("columns")) {
    ColumnSpec c;
    c.name = jc.at("name").get<std::string>();
    std::string kind = jc.at("kind").get<std::string>();
    if (kind == "numeric") {
      c.kind = ColumnSpec::Kind::kNumeric;
    } else if (kind == "categorical") {
      c.kind = ColumnSpec::Kind::kCategorical;
      c.categories = jc.at("values").get<std::vector<std::string>>();
      if (c.categories.empty())
        throw std::invalid_argument("schema: empty category list for " +
                                    c.name);
    } else if (kind == "label") {
      c.kind = ColumnSpec::Kind::kLabel;
      c.positive_value = jc.at("positive").get<std::string>();
    } else if (kind == "sensitive") {
      c.kind = ColumnSpec::Kind::kSensitive;
      const auto& jr = jc.at("rule");
      std::string rk = jr.at("kind").get<std::string>();
      if (rk == "equals") {
        c.rule.kind = SensitiveRule::Kind::kEquals;
        c.rule.equals_value = jr.at("value").get<std::string>();
      } else if (rk == "range") {
        c.rule.kind = SensitiveRule::Kind::kRange;
        c.rule.range_lo = jr.at("low").get<double>();
        c.rule.range_hi = jr.at("high").get<double>();
      } else {
        throw std::invalid_argument("schema: unknown sensitive rule " + rk);
      }
      if (jc.contains("include_in_features"))
        c.include_in_features = jc.at("include_in_features").get<bool>();
    } else {
      throw std::invalid_argument("schema: unknown column kind " + kind);
    }
    s.columns.push_back(std::move(c));
  }
  int labels = 0, sensitives = 0;
  for (const auto& c : s.columns) {
    labels += c.kind == ColumnSpec::Kind::kLabel;
    sensitives += c.kind == ColumnSpec::Kind::kSensitive;
  }
  if (labels != 1 || sensitives != 1)
    throw std::invalid_argument(
        "schema: exactly one label and one sensitive column required");
  return s;
}

// Encoded samples: numeric columns raw (standardization happens at split
// time with train statistics), categoricals one-hot, label and sensitive
// attribute strictly binary.
struct TabularDataset {
  FeatureMatrix features;
  std::vector<int> labels;
  std::vector<int> groups;
  std::vector<std::string> feature_names;
  std::vector<bool> feature_is_numeric;  // standardization mask
  std::size_t dropped_rows = 0;

  std::size_t size() const { return features.rows; }

  TabularDataset subset(std::span<const std::size_t> idx) const {
    TabularDataset out;
    out.features = features.select(idx);
    out.labels.reserve(idx.size());
    out.groups.reserve(idx.size());
    for (std::size_t i : idx) {
      out.labels.push_back(labels[i]);
      out.groups.push_back(groups[i]);
    }
    out.feature_names = feature_names;
    out.feature_is_numeric = feature_is_numeric;
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_line(const std::string& line,
                                           char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == delim && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool is_missing(const std::string& v, const DatasetSchema& s) {
  for (const auto& m : s.missing_markers)
    if (v == m) return true;
  return false;
}

}  // namespace detail

inline TabularDataset load_csv(const std::string& path,
                               const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open " + path);

  TabularDataset ds;
  for (const auto& c : schema.columns) {
    if (c.kind == ColumnSpec::Kind::kLabel) continue;
    bool as_feature = c.kind != ColumnSpec::Kind::kSensitive ||
                      c.include_in_features;
    if (!as_feature) continue;
    if (c.kind == ColumnSpec::Kind::kCategorical) {
      for (const auto& cat : c.categories) {
        ds.feature_names.push_back(c.name + "=" + cat);
        ds.feature_is_numeric.push_back(false);
      }
    } else if (c.kind == ColumnSpec::Kind::kSensitive) {
      // Range-rule attributes keep their raw numeric value as the feature;
      // equals-rule attributes contribute the group bit.
      if (c.rule.kind == SensitiveRule::Kind::kRange) {
        ds.feature_names.push_back(c.name);
        ds.feature_is_numeric.push_back(true);
      } else {
        ds.feature_names.push_back(c.name + "#bit");
        ds.feature_is_numeric.push_back(false);
      }
    } else {
      ds.feature_names.push_back(c.name);
      ds.feature_is_numeric.push_back(true);
    }
  }
  std::size_t width = ds.feature_names.size();

  std::vector<double> rowbuf(width);
  std::string line;
  std::size_t lineno = 0;
  bool skipped_header = !schema.has_header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line, schema.delimiter);
    if (cells.size() != schema.columns.size()) {
      std::ostringstream os;
      os << "load_csv: row " << lineno << " has " << cells.size()
         << " cells, schema expects " << schema.columns.size();
      throw std::invalid_argument(os.str());
    }
    bool drop = false;
    int label = -1, group = -1;
    std::size_t f = 0;
    for (std::size_t c = 0; c < schema.columns.size() && !drop; ++c) {
      const auto& spec = schema.columns[c];
      const std::string& v = cells[c];
      if (detail::is_missing(v, schema)) {
        drop = true;
        break;
      }
      switch (spec.kind) {
        case ColumnSpec::Kind::kNumeric: {
          try {
            rowbuf[f++] = std::stod(v);
          } catch (const std::exception&) {
            std::ostringstream os;
            os << "load_csv: row " << lineno << " column '" << spec.name
               << "': not numeric: '" << v << "'";
            throw std::invalid_argument(os.str());
          }
          break;
        }
        case ColumnSpec::Kind::kCategorical: {
          auto it =
              std::find(spec.categories.begin(), spec.categories.end(), v);
          if (it == spec.categories.end()) {
            drop = true;  // out-of-vocabulary treated as missing
            break;
          }
          for (std::size_t k = 0; k < spec.categories.size(); ++k)
            rowbuf[f + k] = 0.0;
          rowbuf[f + static_cast<std::size_t>(
                         it - spec.categories.begin())] = 1.0;
          f += spec.categories.size();
          break;
        }
        case ColumnSpec::Kind::kLabel: {
          label = (v == spec.positive_value) ? 1 : 0;
          break;
        }
        case ColumnSpec::Kind::kSensitive: {
          int bit;
          double raw = 0.0;
          if (spec.rule.kind == SensitiveRule::Kind::kEquals) {
            bit = (v == spec.rule.equals_value) ? 1 : 0;
            raw = static_cast<double>(bit);
          } else {
            try {
              raw = std::stod(v);
            } catch (const std::exception&) {
              std::ostringstream os;
              os << "load_csv: row " << lineno << " column '" << spec.name
                 << "': sensitive range rule needs a number, got '" << v
                 << "'";
              throw std::invalid_argument(os.str());
            }
            bit = (raw >= spec.rule.range_lo && raw <= spec.rule.range_hi)
                      ? 1
                      : 0;
          }
          group = bit;
          if (spec.include_in_features) rowbuf[f++] = raw;
          break;
        }
      }
    }
    if (drop) {
      ++ds.dropped_rows;
      continue;
    }
    ds.features.data.insert(ds.features.data.end(), rowbuf.begin(),
                            rowbuf.end());
    ds.features.rows += 1;
    ds.labels.push_back(label);
    ds.groups.push_back(group);
  }
  ds.features.cols = width;
  return ds;
}

// Per-column affine transform fitted on one dataset and applied to others.
struct Standardizer {
  std::vector<double> mean, scale;

  static Standardizer fit(const TabularDataset& ds) {
    Standardizer st;
    std::size_t d = ds.features.cols;
    st.mean.assign(d, 0.0);
    st.scale.assign(d, 1.0);
    if (ds.size() == 0) return st;
    for (std::size_t j = 0; j < d; ++j) {
      if (!ds.feature_is_numeric[j]) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < ds.size(); ++i) s += ds.features.at(i, j);
      double mu = s / static_cast<double>(ds.size());
      double var = 0.0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        double dx = ds.features.at(i, j) - mu;
        var += dx * dx;
      }
      var /= static_cast<double>(ds.size());
      st.mean[j] = mu;
      st.scale[j] = var > 0 ? std::sqrt(var) : 1.0;
    }
    return st;
  }

  void apply(TabularDataset& ds) const {
    for (std::size_t j = 0; j < ds.features.cols; ++j) {
      if (!ds.feature_is_numeric[j]) continue;
      for (std::size_t i = 0; i < ds.size(); ++i)
        ds.features.at(i, j) = (ds.features.at(i, j) - mean[j]) / scale[j];
    }
  }
};

struct SplitResult {
  TabularDataset train, test;
  bool stratified = true;
};

// Disjoint split, stratified by (group, label) where every cell has at
// least two rows; numeric columns are standardized with train statistics
// applied to both sides.
inline SplitResult split_train_test(const TabularDataset& ds,
                                    double test_fraction, std::uint64_t seed) {
  if (ds.size() == 0) throw std::invalid_argument("split: empty dataset");
  if (!(test_fraction > 0) || test_fraction >= 1)
    throw std::invalid_argument("split: fraction outside (0, 1)");

  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < ds.size(); ++i)
    cells[{ds.groups[i], ds.labels[i]}].push_back(i);

  bool stratified = true;
  for (const auto& [cell, rows] : cells)
    if (rows.size() < 2) stratified = false;

  RngStream rng(derive_seed(seed, 0, 0, StreamPurpose::kSplit));
  auto shuffle = [&rng](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<std::size_t>(rng.next_double() *
                                                     static_cast<double>(i))]);
  };

  std::vector<std::size_t> test_idx, train_idx;
  if (stratified) {
    for (auto& [cell, rows] : cells) {
      shuffle(rows);
      auto n_test = static_cast<std::size_t>(
          std::llround(test_fraction * static_cast<double>(rows.size())));
      for (std::size_t k = 0; k < rows.size(); ++k)
        (k < n_test ? test_idx : train_idx).push_back(rows[k]);
    }
  } else {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    shuffle(all);
    auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(all.size())));
    for (std::size_t k = 0; k < all.size(); ++k)
      (k < n_test ? test_idx : train_idx).push_back(all[k]);
  }
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  SplitResult out;
  out.stratified = stratified;
  out.train = ds.subset(train_idx);
  out.test = ds.subset(test_idx);
  Standardizer st = Standardizer::fit(out.train);
  st.apply(out.train);
  st.apply(out.test);
  return out;
}

// Upsampling-and-partition plan: which train rows each agent gets and which
// rows were duplicated to reach the target size.
struct ShardPlan {
  std::size_t agents = 0;
  std::size_t effective_target = 0;          // n_target rounded up to m | N
  std::vector<std::vector<std::size_t>> shards;  // row indices into train
  std::vector<std::size_t> duplicated_rows;      // source rows of the copies
};

// Duplicates under-represented (group, label) cells first (largest shortfall
// versus the uniform cell share), then deals the pool into m equal shards by
// a seeded shuffle. No stratification across agents, so shard attribute
// mixes drift naturally.
inline ShardPlan shard_with_duplication(const TabularDataset& train,
                                        std::size_t m, std::size_t n_target,
                                        std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("shard: m must be >= 1");
  std::size_t n = train.size();
  if (n_target < n)
    throw std::invalid_argument("shard: n_target below train size");

  ShardPlan plan;
  plan.agents = m;
  plan.effective_target = ((n_target + m - 1) / m) * m;
  std::size_t need = plan.effective_target - n;

  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < n; ++i)
    cells[{train.groups[i], train.labels[i]}].push_back(i);

  // Shortfall of each cell versus the uniform share across non-empty cells.
  double uniform = static_cast<double>(n) / static_cast<double>(cells.size());
  std::vector<std::pair<std::pair<int, int>, double>> deficits;
  double total_deficit = 0.0;
  for (const auto& [cell, rows] : cells) {
    double d = std::max(0.0, uniform - static_cast<double>(rows.size()));
    deficits.emplace_back(cell, d);
    total_deficit += d;
  }

  std::vector<std::size_t> alloc(deficits.size(), 0);
  if (need > 0) {
    std::vector<double> weight(deficits.size());
    for (std::size_t k = 0; k < deficits.size(); ++k)
      weight[k] = total_deficit > 0
                      ? deficits[k].second / total_deficit
                      : static_cast<double>(
                            cells.at(deficits[k].first).size()) /
                            static_cast<double>(n);
    std::size_t assigned = 0;
    std::vector<double> remainder(deficits.size());
    for (std::size_t k = 0; k < deficits.size(); ++k) {
      double exact = weight[k] * static_cast<double>(need);
      alloc[k] = static_cast<std::size_t>(std::floor(exact));
      remainder[k] = exact - std::floor(exact);
      assigned += alloc[k];
    }
    // Leftover copies go to the cells with the largest remainder, breaking
    // ties toward the larger deficit.
    std::vector<std::size_t> order(deficits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       if (remainder[a] != remainder[b])
                         return remainder[a] > remainder[b];
                       return deficits[a].second > deficits[b].second;
                     });
    for (std::size_t k = 0; assigned < need; ++k)
      alloc[order[k % order.size()]] += 1, ++assigned;
  }

  RngStream rng(derive_seed(seed, 0, 0, StreamPurpose::kShard));
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t k = 0; k < deficits.size(); ++k) {
    const auto& rows = cells.at(deficits[k].first);
    for (std::size_t c = 0; c < alloc[k]; ++c) {
      std::size_t pick = rows[static_cast<std::size_t>(
          rng.next_double() * static_cast<double>(rows.size()))];
      pool.push_back(pick);
      plan.duplicated_rows.push_back(pick);
    }
  }

  for (std::size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[static_cast<std::size_t>(
                               rng.next_double() * static_cast<double>(i))]);

  std::size_t per_shard = plan.effective_target / m;
  plan.shards.assign(m, {});
  for (std::size_t a = 0; a < m; ++a)
    plan.shards[a].assign(pool.begin() + a * per_shard,
                          pool.begin() + (a + 1) * per_shard);
  return plan;
}

// Adult-shaped synthetic data: group-dependent base rates, a couple of
// feature directions shifted by group membership, and (optionally) the
// attribute itself as a feature column. Gives an accuracy-trained model a
// real fairness gap to expose.
struct SyntheticConfig {
  std::size_t n = 6250;
  std::size_t num_features = 8;
  double minority_fraction = 0.34;
  double group_logit_shift = 2.0;  // subtracted from minority logits
  double feature_shift = 0.8;      // added to first two features for a = 1
  double signal_scale = 2.0;
  double intercept = -0.4;
  bool attribute_in_features = true;
  std::uint64_t seed = 0;
};

inline TabularDataset make_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n == 0 || cfg.num_features == 0)
    throw std::invalid_argument("synthetic: empty configuration");
  RngStream rng(derive_seed(cfg.seed, 0, 0, StreamPurpose::kSynthetic));

  std::vector<double> w(cfg.num_features);
  for (double& x : w) x = rng.next_gaussian();
  double norm = l2_norm(w);
  for (double& x : w) x = x / norm * cfg.signal_scale;

  TabularDataset ds;
  std::size_t width = cfg.num_features + (cfg.attribute_in_features ? 1 : 0);
  ds.features = FeatureMatrix(cfg.n, width);
  for (std::size_t j = 0; j < cfg.num_features; ++j) {
    ds.feature_names.push_back("x" + std::to_string(j));
    ds.feature_is_numeric.push_back(true);
  }
  if (cfg.attribute_in_features) {
    ds.feature_names.push_back("group#bit");
    ds.feature_is_numeric.push_back(false);
  }

  for (std::size_t i = 0; i < cfg.n; ++i) {
    int a = rng.next_double() < cfg.minority_fraction ? 1 : 0;
    double logit = cfg.intercept - (a == 1 ? cfg.group_logit_shift : 0.0);
    for (std::size_t j = 0; j < cfg.num_features; ++j) {
      double z = rng.next_gaussian();
      ds.features.at(i, j) = z + (j < 2 ? cfg.feature_shift * a : 0.0);
      logit += w[j] * z;
    }
    if (cfg.attribute_in_features)
      ds.features.at(i, cfg.num_features) = static_cast<double>(a);
    int y = rng.next_double() < sigmoid(logit) ? 1 : 0;
    ds.groups.push_back(a);
    ds.labels.push_back(y);
  }
  return ds;
}

}  // namespace fpfl
