#include "advx/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "advx/errors.hpp"
#include "advx/io.hpp"

namespace advx::data {

namespace {

bool is_missing(std::string_view field) {
  field = io::trim(field);
  return field.empty() || field == "NA" || field == "-" || field == "?" || field == "null";
}

std::size_t find_column(const std::vector<std::string_view>& header, std::string_view name,
                        const std::filesystem::path& path) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (io::trim(header[i]) == name) return i;
  }
  throw DataError(path.string() + ":1: header lacks column '" + std::string(name) + "'");
}

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

SubsetResult make_subset(const InteractionDataset& dataset, const std::vector<bool>& user_alive,
                         const std::vector<bool>& item_alive) {
  SubsetResult result;
  std::vector<ItemIndex> item_map(dataset.n_items, 0);
  for (std::size_t i = 0; i < dataset.n_items; ++i) {
    if (!item_alive[i]) continue;
    item_map[i] = static_cast<ItemIndex>(result.kept_items.size());
    result.kept_items.push_back(i);
    result.dataset.item_ids.push_back(dataset.item_ids.empty() ? std::to_string(i)
                                                               : dataset.item_ids[i]);
  }
  for (std::size_t u = 0; u < dataset.n_users; ++u) {
    if (!user_alive[u]) continue;
    std::vector<ItemIndex> row;
    for (ItemIndex i : dataset.rows[u]) {
      if (item_alive[i]) row.push_back(item_map[i]);
    }
    result.kept_users.push_back(u);
    result.dataset.user_ids.push_back(dataset.user_ids.empty() ? std::to_string(u)
                                                               : dataset.user_ids[u]);
    result.dataset.rows.push_back(std::move(row));
  }
  result.dataset.n_users = result.kept_users.size();
  result.dataset.n_items = result.kept_items.size();
  return result;
}

}  // namespace

std::size_t InteractionDataset::interactions() const noexcept {
  std::size_t total = 0;
  for (const auto& r : rows) total += r.size();
  return total;
}

double InteractionDataset::density() const noexcept {
  if (n_users == 0 || n_items == 0) return 0.0;
  return static_cast<double>(interactions()) /
         (static_cast<double>(n_users) * static_cast<double>(n_items));
}

ad::RealArray InteractionDataset::dense_rows(std::span<const std::size_t> users) const {
  ad::RealArray out(users.size(), n_items);
  for (std::size_t r = 0; r < users.size(); ++r) {
    for (ItemIndex i : rows.at(users[r])) out(r, i) = 1.0;
  }
  return out;
}

ad::RealArray to_dense(std::span<const std::vector<ItemIndex>> rows, std::size_t n_items) {
  ad::RealArray out(rows.size(), n_items);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (ItemIndex i : rows[r]) {
      if (i >= n_items) throw DataError("item index out of range in to_dense");
      out(r, i) = 1.0;
    }
  }
  return out;
}

void InteractionDataset::validate() const {
  if (rows.size() != n_users) throw DataError("dataset has " + std::to_string(rows.size()) +
                                              " rows for " + std::to_string(n_users) + " users");
  if (!user_ids.empty() && user_ids.size() != n_users) throw DataError("user id map size mismatch");
  if (!item_ids.empty() && item_ids.size() != n_items) throw DataError("item id map size mismatch");
  for (std::size_t u = 0; u < n_users; ++u) {
    for (std::size_t k = 0; k < rows[u].size(); ++k) {
      if (rows[u][k] >= n_items) throw DataError("user " + std::to_string(u) + " has item index out of range");
      if (k > 0 && rows[u][k] <= rows[u][k - 1]) {
        throw DataError("user " + std::to_string(u) + " row is unsorted or has duplicates");
      }
    }
  }
}

double normalize_age(double raw_age, double cap, const std::string& user) {
  if (!(cap > 0.0)) throw ConfigError("age cap must be positive");
  if (!(raw_age >= 0.0 && raw_age <= cap)) {
    throw DataError("age " + std::to_string(raw_age) + " of user '" + user + "' outside [0, " +
                    std::to_string(cap) + "]");
  }
  return raw_age / cap;
}

LoadedData load_interactions(const std::filesystem::path& interactions,
                             const std::filesystem::path& demographics, double age_cap) {
  if (!std::filesystem::exists(demographics)) {
    throw DataError("demographics file not found: " + demographics.string());
  }
  if (!std::filesystem::exists(interactions)) {
    throw DataError("interactions file not found: " + interactions.string());
  }

  LoadedData out;
  out.attributes.age_cap = age_cap;

  struct Demo {
    int gender;
    double age;
  };
  std::unordered_map<std::string, Demo> demo;
  {
    std::ifstream in(demographics);
    std::string line;
    std::size_t line_no = 0;
    std::size_t c_user = 0, c_gender = 0, c_age = 0;
    std::unordered_map<std::string, int> token_index;
    while (std::getline(in, line)) {
      ++line_no;
      if (io::trim(line).empty()) continue;
      auto fields = io::split(line, '\t');
      if (line_no == 1) {
        c_user = find_column(fields, "user_id", demographics);
        c_gender = find_column(fields, "gender", demographics);
        c_age = find_column(fields, "age", demographics);
        continue;
      }
      const std::size_t needed = std::max({c_user, c_gender, c_age}) + 1;
      if (fields.size() < needed) {
        throw DataError(location(demographics, line_no) + "expected at least " +
                        std::to_string(needed) + " columns, found " + std::to_string(fields.size()));
      }
      std::string user(io::trim(fields[c_user]));
      if (user.empty()) throw DataError(location(demographics, line_no) + "empty user_id");
      if (is_missing(fields[c_gender]) || is_missing(fields[c_age])) {
        ++out.report.users_missing_attributes;
        continue;
      }
      double age = 0.0;
      try {
        age = static_cast<double>(io::parse_int(fields[c_age]));
      } catch (const DataError& e) {
        throw DataError(location(demographics, line_no) + e.what());
      }
      std::string token(io::trim(fields[c_gender]));
      auto [it, inserted] =
          token_index.emplace(token, static_cast<int>(out.attributes.gender_tokens.size()));
      if (inserted) out.attributes.gender_tokens.push_back(token);
      if (!demo.emplace(user, Demo{it->second, age}).second) {
        throw DataError(location(demographics, line_no) + "duplicate user_id '" + user + "'");
      }
      normalize_age(age, age_cap, user);  // validates range
    }
  }

  std::unordered_map<std::string, std::size_t> user_index;
  std::unordered_map<std::string, ItemIndex> item_index;
  InteractionDataset& ds = out.dataset;
  {
    std::ifstream in(interactions);
    std::string line;
    std::size_t line_no = 0;
    std::size_t c_user = 0, c_item = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (io::trim(line).empty()) continue;
      auto fields = io::split(line, '\t');
      if (line_no == 1) {
        c_user = find_column(fields, "user_id", interactions);
        c_item = find_column(fields, "item_id", interactions);
        continue;
      }
      const std::size_t needed = std::max(c_user, c_item) + 1;
      if (fields.size() < needed) {
        throw DataError(location(interactions, line_no) + "expected at least " +
                        std::to_string(needed) + " columns, found " + std::to_string(fields.size()));
      }
      std::string user(io::trim(fields[c_user]));
      std::string item(io::trim(fields[c_item]));
      if (user.empty() || item.empty()) {
        throw DataError(location(interactions, line_no) + "empty user_id or item_id");
      }
      ++out.report.interaction_rows;
      if (!demo.contains(user)) {
        ++out.report.unknown_user_rows;
        continue;
      }
      auto [uit, new_user] = user_index.emplace(user, ds.user_ids.size());
      if (new_user) {
        ds.user_ids.push_back(user);
        ds.rows.emplace_back();
      }
      auto [iit, new_item] = item_index.emplace(item, static_cast<ItemIndex>(ds.item_ids.size()));
      if (new_item) ds.item_ids.push_back(item);
      ds.rows[uit->second].push_back(iit->second);
    }
  }
  ds.n_users = ds.user_ids.size();
  ds.n_items = ds.item_ids.size();
  for (auto& row : ds.rows) {
    std::sort(row.begin(), row.end());
    const auto before = row.size();
    row.erase(std::unique(row.begin(), row.end()), row.end());
    out.report.duplicate_rows += before - row.size();
  }

  UserAttributes& attrs = out.attributes;
  for (const auto& user : ds.user_ids) {
    const Demo& d = demo.at(user);
    attrs.gender.push_back(d.gender);
    attrs.age_raw.push_back(d.age);
    attrs.age_normalized.push_back(normalize_age(d.age, age_cap, user));
  }
  return out;
}

namespace {

std::vector<std::string_view> split_double_colon(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find("::", start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 2;
  }
}

std::string convert_dat(const std::filesystem::path& path, const std::string& header,
                        std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string out = header + "\n";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (io::trim(line).empty()) continue;
    const auto fields = split_double_colon(line);
    if (fields.size() < columns) {
      throw DataError(location(path, line_no) + "expected at least " + std::to_string(columns) +
                      " '::'-separated fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < columns; ++c) {
      if (fields[c].find('\t') != std::string_view::npos) {
        throw DataError(location(path, line_no) + "field contains a tab");
      }
      out += fields[c];
      out += c + 1 == columns ? '\n' : '\t';
    }
  }
  return out;
}

}  // namespace

void convert_movielens(const std::filesystem::path& ratings, const std::filesystem::path& users,
                       const std::filesystem::path& interactions_out,
                       const std::filesystem::path& demographics_out) {
  io::write_file_atomic(interactions_out, convert_dat(ratings, "user_id\titem_id", 2));
  io::write_file_atomic(demographics_out, convert_dat(users, "user_id\tgender\tage", 3));
}

SubsetResult k_core_filter(const InteractionDataset& dataset, std::size_t k) {
  if (k < 1) throw ConfigError("k-core requires k >= 1");
  const std::size_t nu = dataset.n_users;
  const std::size_t ni = dataset.n_items;
  std::vector<std::size_t> user_deg(nu), item_deg(ni, 0);
  std::vector<std::vector<std::size_t>> item_users(ni);
  for (std::size_t u = 0; u < nu; ++u) {
    user_deg[u] = dataset.rows[u].size();
    for (ItemIndex i : dataset.rows[u]) {
      ++item_deg[i];
      item_users[i].push_back(u);
    }
  }
  std::vector<bool> user_alive(nu, true), item_alive(ni, true);
  // Peeling queue; entries >= nu denote items.
  std::deque<std::size_t> queue;
  for (std::size_t u = 0; u < nu; ++u) {
    if (user_deg[u] < k) {
      user_alive[u] = false;
      queue.push_back(u);
    }
  }
  for (std::size_t i = 0; i < ni; ++i) {
    if (item_deg[i] < k) {
      item_alive[i] = false;
      queue.push_back(nu + i);
    }
  }
  while (!queue.empty()) {
    const std::size_t node = queue.front();
    queue.pop_front();
    if (node < nu) {
      for (ItemIndex i : dataset.rows[node]) {
        if (item_alive[i] && --item_deg[i] < k) {
          item_alive[i] = false;
          queue.push_back(nu + i);
        }
      }
    } else {
      for (std::size_t u : item_users[node - nu]) {
        if (user_alive[u] && --user_deg[u] < k) {
          user_alive[u] = false;
          queue.push_back(u);
        }
      }
    }
  }
  return make_subset(dataset, user_alive, item_alive);
}

SubsetResult subsample_items(const InteractionDataset& dataset, std::size_t item_count, Rng& rng) {
  std::vector<bool> item_alive(dataset.n_items, true);
  if (item_count < dataset.n_items) {
    std::vector<std::size_t> order(dataset.n_items);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::fill(item_alive.begin(), item_alive.end(), false);
    for (std::size_t k = 0; k < item_count; ++k) item_alive[order[k]] = true;
  }
  std::vector<bool> user_alive(dataset.n_users, false);
  for (std::size_t u = 0; u < dataset.n_users; ++u) {
    for (ItemIndex i : dataset.rows[u]) {
      if (item_alive[i]) {
        user_alive[u] = true;
        break;
      }
    }
  }
  return make_subset(dataset, user_alive, item_alive);
}

UserAttributes select_users(const UserAttributes& attributes, std::span<const std::size_t> users) {
  UserAttributes out;
  out.gender_tokens = attributes.gender_tokens;
  out.age_cap = attributes.age_cap;
  for (std::size_t u : users) {
    out.gender.push_back(attributes.gender.at(u));
    out.age_raw.push_back(attributes.age_raw.at(u));
    out.age_normalized.push_back(attributes.age_normalized.at(u));
  }
  return out;
}

std::vector<FoldSplit> make_folds(std::size_t user_count, std::uint64_t seed) {
  if (user_count < kFoldCount) {
    throw ConfigError("make_folds needs at least 5 users, got " + std::to_string(user_count));
  }
  const auto n = static_cast<double>(user_count);
  const auto n_test = static_cast<std::size_t>(std::llround(0.2 * n));
  const auto n_val =
      static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(user_count - n_test)));
  std::vector<FoldSplit> folds;
  for (std::size_t f = 0; f < kFoldCount; ++f) {
    Rng rng = make_stream(seed, {kDataStream, 1000 + f});
    std::vector<std::size_t> order(user_count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    FoldSplit split;
    split.fold_index = f;
    split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                            order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
    std::sort(split.test.begin(), split.test.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
    folds.push_back(std::move(split));
  }
  return folds;
}

HoldoutSplit holdout_split(std::span<const ItemIndex> row, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("holdout ratio must be in (0, 1)");
  std::vector<ItemIndex> items(row.begin(), row.end());
  std::shuffle(items.begin(), items.end(), rng);
  const auto n_fold_in =
      static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(items.size())));
  HoldoutSplit split;
  split.fold_in.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_fold_in));
  split.holdout.assign(items.begin() + static_cast<std::ptrdiff_t>(n_fold_in), items.end());
  std::sort(split.fold_in.begin(), split.fold_in.end());
  std::sort(split.holdout.begin(), split.holdout.end());
  return split;
}

std::vector<double> class_weights(std::span<const int> labels, std::size_t n_classes) {
  if (n_classes == 0) throw ConfigError("class_weights needs at least one class");
  std::vector<std::size_t> counts(n_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw DataError("class label " + std::to_string(y) + " out of range");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<double> weights(n_classes);
  const auto n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) throw ConfigError("class " + std::to_string(c) + " has no samples");
    weights[c] = n / (static_cast<double>(n_classes) * static_cast<double>(counts[c]));
  }
  return weights;
}

adv::TargetTable make_targets(const UserAttributes& attributes,
                              std::span<const std::string> names) {
  adv::TargetTable table;
  for (const auto& name : names) {
    adv::AttributeColumn column;
    if (name == "gender") {
      for (std::size_t u = 0; u < attributes.size(); ++u) {
        if (!attributes.gender[u]) throw DataError("user " + std::to_string(u) + " lacks gender");
        column.labels.push_back(*attributes.gender[u]);
      }
    } else if (name == "age") {
      for (std::size_t u = 0; u < attributes.size(); ++u) {
        if (!attributes.age_normalized[u]) throw DataError("user " + std::to_string(u) + " lacks age");
        column.values.push_back(*attributes.age_normalized[u]);
      }
    } else {
      throw ConfigError("unknown attribute '" + name + "' (supported: gender, age)");
    }
    table.emplace(name, std::move(column));
  }
  return table;
}

DatasetStats compute_stats(const InteractionDataset& dataset, const UserAttributes& attributes) {
  DatasetStats s;
  s.users = dataset.n_users;
  s.items = dataset.n_items;
  s.interactions = dataset.interactions();
  s.density = dataset.density();
  std::vector<std::size_t> counts(attributes.gender_tokens.size(), 0);
  std::vector<double> ages;
  for (std::size_t u = 0; u < attributes.size(); ++u) {
    if (attributes.gender[u]) ++counts.at(static_cast<std::size_t>(*attributes.gender[u]));
    if (attributes.age_raw[u]) ages.push_back(*attributes.age_raw[u]);
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    s.gender_counts.emplace_back(attributes.gender_tokens[c], counts[c]);
  }
  if (!ages.empty()) {
    const auto n = static_cast<double>(ages.size());
    s.age_mean = std::accumulate(ages.begin(), ages.end(), 0.0) / n;
    double sq = 0.0;
    for (double a : ages) sq += (a - s.age_mean) * (a - s.age_mean);
    s.age_std = ages.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    std::sort(ages.begin(), ages.end());
    const std::size_t mid = ages.size() / 2;
    s.age_median = ages.size() % 2 ? ages[mid] : 0.5 * (ages[mid - 1] + ages[mid]);
  }
  return s;
}

namespace {

constexpr std::string_view kCacheMagic = "advx-dataset-cache v1";

void check_token(const std::string& s, const char* what) {
  if (s.find_first_of("\t\n\r") != std::string::npos || s.empty()) {
    throw DataError(std::string(what) + " '" + s + "' is empty or contains tab/newline");
  }
}

std::string optional_hex(const std::optional<double>& v) { return v ? io::hex_double(*v) : "-"; }

std::string serialize(const InteractionDataset& dataset, const UserAttributes& attributes) {
  dataset.validate();
  if (attributes.size() != dataset.n_users) {
    throw DataError("attribute table has " + std::to_string(attributes.size()) + " users, dataset " +
                    std::to_string(dataset.n_users));
  }
  std::ostringstream os;
  os << kCacheMagic << '\n';
  os << "n_users\t" << dataset.n_users << '\n';
  os << "n_items\t" << dataset.n_items << '\n';
  os << "age_cap\t" << io::hex_double(attributes.age_cap) << '\n';
  os << "gender_tokens\t" << attributes.gender_tokens.size();
  for (const auto& t : attributes.gender_tokens) {
    check_token(t, "gender token");
    os << '\t' << t;
  }
  os << "\nitems\n";
  for (std::size_t i = 0; i < dataset.n_items; ++i) {
    const std::string id = dataset.item_ids.empty() ? std::to_string(i) : dataset.item_ids[i];
    check_token(id, "item id");
    os << id << '\n';
  }
  os << "users\n";
  for (std::size_t u = 0; u < dataset.n_users; ++u) {
    const std::string id = dataset.user_ids.empty() ? std::to_string(u) : dataset.user_ids[u];
    check_token(id, "user id");
    os << id << '\t' << (attributes.gender[u] ? std::to_string(*attributes.gender[u]) : "-")
       << '\t' << optional_hex(attributes.age_raw[u]) << '\t'
       << optional_hex(attributes.age_normalized[u]) << '\t';
    for (std::size_t k = 0; k < dataset.rows[u].size(); ++k) {
      if (k) os << ' ';
      os << dataset.rows[u][k];
    }
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

}  // namespace

void save_cache(const std::filesystem::path& path, const InteractionDataset& dataset,
                const UserAttributes& attributes) {
  io::write_file_atomic(path, serialize(dataset, attributes));
}

std::pair<InteractionDataset, UserAttributes> load_cache(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string& {
    if (!std::getline(in, line)) throw DataError(location(path, line_no) + "unexpected end of cache");
    ++line_no;
    return line;
  };
  auto expect_key = [&](std::string_view key) {
    auto fields = io::split(next(), '\t');
    if (fields.size() < 2 || fields[0] != key) {
      throw DataError(location(path, line_no) + "expected '" + std::string(key) + "'");
    }
    return fields;
  };

  if (next() != kCacheMagic) throw DataError(location(path, line_no) + "not a dataset cache (v1)");
  InteractionDataset ds;
  UserAttributes attrs;
  ds.n_users = static_cast<std::size_t>(io::parse_int(expect_key("n_users")[1]));
  ds.n_items = static_cast<std::size_t>(io::parse_int(expect_key("n_items")[1]));
  attrs.age_cap = io::parse_double(expect_key("age_cap")[1]);
  {
    auto fields = expect_key("gender_tokens");
    const auto count = static_cast<std::size_t>(io::parse_int(fields[1]));
    if (fields.size() != count + 2) throw DataError(location(path, line_no) + "bad gender_tokens");
    for (std::size_t k = 0; k < count; ++k) attrs.gender_tokens.emplace_back(fields[k + 2]);
  }
  if (next() != "items") throw DataError(location(path, line_no) + "expected 'items'");
  for (std::size_t i = 0; i < ds.n_items; ++i) ds.item_ids.push_back(next());
  if (next() != "users") throw DataError(location(path, line_no) + "expected 'users'");
  auto optional_value = [](std::string_view f) -> std::optional<double> {
    if (f == "-") return std::nullopt;
    return io::parse_double(f);
  };
  for (std::size_t u = 0; u < ds.n_users; ++u) {
    auto fields = io::split(next(), '\t');
    if (fields.size() != 5) throw DataError(location(path, line_no) + "user line needs 5 fields");
    ds.user_ids.emplace_back(fields[0]);
    attrs.gender.push_back(fields[1] == "-" ? std::nullopt
                                            : std::optional<int>(static_cast<int>(io::parse_int(fields[1]))));
    attrs.age_raw.push_back(optional_value(fields[2]));
    attrs.age_normalized.push_back(optional_value(fields[3]));
    std::vector<ItemIndex> row;
    if (!fields[4].empty()) {
      for (auto tok : io::split(fields[4], ' ')) row.push_back(static_cast<ItemIndex>(io::parse_int(tok)));
    }
    ds.rows.push_back(std::move(row));
  }
  if (next() != "end") throw DataError(location(path, line_no) + "expected 'end'");
  ds.validate();
  return {std::move(ds), std::move(attrs)};
}

std::uint64_t dataset_checksum(const InteractionDataset& dataset, const UserAttributes& attributes) {
  return io::fnv1a(serialize(dataset, attributes));
}

}  // namespace advx::data
