// whittle-cache: command-line front end over the C API.
//
//   whittle-cache index    --config run.json [--seed N] [--out table.csv]
//   whittle-cache learn    --config run.json [--algorithm q+-whittle] [--trace trace.csv] ...
//   whittle-cache simulate --config run.json [--policy whittle-oracle,random] [--seeds 10] ...
//   whittle-cache workload --config run.json [--gen-trace requests.csv]
//
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "whittle_cache/whittle_cache.h"

namespace {

using json = nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Error with a chosen exit code.
struct Failure : std::runtime_error {
  Failure(int code, const std::string& what) : std::runtime_error(what), exit_code(code) {}
  int exit_code;
};

[[noreturn]] void usage_error(const std::string& what) { throw Failure(kExitUsage, what); }

int exit_code_for(wc_status status) {
  switch (status) {
    case WC_INVALID_ARGUMENT:
    case WC_DEGENERATE_DENOMINATOR:
    case WC_EMPTY_TRACE:
    case WC_NON_MONOTONIC_TIMESTAMPS:
    case WC_PARSE_ERROR:
    case WC_IO_ERROR:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

void check(wc_status status, const std::string& context) {
  if (status != WC_OK) {
    throw Failure(exit_code_for(status), context + ": " + wc_last_error() + " [" + wc_status_name(status) + "]");
  }
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using WorkloadPtr = std::unique_ptr<wc_workload, Deleter<wc_workload, wc_workload_free>>;
using SystemPtr = std::unique_ptr<wc_system, Deleter<wc_system, wc_system_free>>;
using PolicyPtr = std::unique_ptr<wc_policy, Deleter<wc_policy, wc_policy_free>>;
using EpisodePtr = std::unique_ptr<wc_episode, Deleter<wc_episode, wc_episode_free>>;
using LearnRunPtr = std::unique_ptr<wc_learn_run, Deleter<wc_learn_run, wc_learn_run_free>>;

std::string fmt(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

// ------------------------------------------------------------------ config

/// Reads `key` from `obj` with a default, checks the JSON type and records the
/// resolved value in `out`.
class Section {
 public:
  Section(const json& obj, json& out, std::string path) : obj_(obj), out_(out), path_(std::move(path)) {
    if (!obj_.is_object()) usage_error("config: '" + name() + "' must be an object");
  }

  double number(const std::string& key, std::optional<double> fallback) {
    const json* v = find(key);
    double x = 0.0;
    if (v == nullptr) {
      if (!fallback) usage_error("config: missing required field '" + qualified(key) + "'");
      x = *fallback;
    } else {
      if (!v->is_number()) usage_error("config: '" + qualified(key) + "' must be a number");
      x = v->get<double>();
    }
    out_[key] = x;
    return x;
  }

  long integer(const std::string& key, std::optional<long> fallback) {
    const json* v = find(key);
    long x = 0;
    if (v == nullptr) {
      if (!fallback) usage_error("config: missing required field '" + qualified(key) + "'");
      x = *fallback;
    } else {
      if (!v->is_number_integer()) usage_error("config: '" + qualified(key) + "' must be an integer");
      x = v->get<long>();
    }
    out_[key] = x;
    return x;
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const json* v = find(key);
    std::uint64_t x = fallback;
    if (v != nullptr) {
      if (!v->is_number_unsigned()) usage_error("config: '" + qualified(key) + "' must be a non-negative integer");
      x = v->get<std::uint64_t>();
    }
    out_[key] = x;
    return x;
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key);
    bool x = fallback;
    if (v != nullptr) {
      if (!v->is_boolean()) usage_error("config: '" + qualified(key) + "' must be true or false");
      x = v->get<bool>();
    }
    out_[key] = x;
    return x;
  }

  std::string string(const std::string& key, std::optional<std::string> fallback,
                     const std::vector<std::string>& choices = {}) {
    const json* v = find(key);
    std::string x;
    if (v == nullptr) {
      if (!fallback) usage_error("config: missing required field '" + qualified(key) + "'");
      x = *fallback;
    } else {
      if (!v->is_string()) usage_error("config: '" + qualified(key) + "' must be a string");
      x = v->get<std::string>();
    }
    if (!choices.empty() && std::find(choices.begin(), choices.end(), x) == choices.end()) {
      std::string list;
      for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
      usage_error("config: '" + qualified(key) + "' must be one of " + list + " (got '" + x + "')");
    }
    out_[key] = x;
    return x;
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  /// Records a flag override in the resolved config.
  void set(const std::string& key, const json& value) { out_[key] = value; }

  const json& raw(const std::string& key) const { return obj_.at(key); }

  Section child(const std::string& key) {
    static const json empty = json::object();
    const json* v = find(key);
    if (!out_.contains(key)) out_[key] = json::object();
    return Section(v ? *v : empty, out_[key], qualified(key));
  }

  /// Rejects keys outside `allowed`.
  void only(std::initializer_list<const char*> allowed) const {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj_.items()) {
      if (ok.count(key) == 0) usage_error("config: unknown field '" + qualified(key) + "'");
    }
  }

 private:
  const json* find(const std::string& key) const {
    const auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }
  std::string name() const { return path_.empty() ? "<root>" : path_; }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& obj_;
  json& out_;
  std::string path_;
};

struct Content {
  std::uint64_t id = 0;
  double lambda = 0.0;
  double nu = 0.0;
  int s_max = 0;
};

struct Model {
  std::uint64_t seed = 0;
  double alpha = 0.98;
  int cache_size = 1;
  std::vector<Content> contents;
  WorkloadPtr workload;  ///< set for zipf/trace workloads
  bool from_trace = false;
};

struct Invocation {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_path;
  // learn
  std::string algorithm;
  std::string trace_path;
  std::optional<long> iterations;
  std::string features;
  std::string schedule;
  // simulate
  std::vector<std::string> policies;
  std::optional<long> seeds;
  std::optional<double> horizon;
  std::string index_table;
  std::string json_path;
  // workload
  std::string gen_trace;
};

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) usage_error("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    usage_error("config '" + path + "' is not valid JSON: " + e.what());
  }
}

void require_positive(double x, const std::string& what) {
  if (!(x > 0.0) || !std::isfinite(x)) usage_error("config: " + what + " must be > 0");
}

Model resolve_model(Section& root, const Invocation& inv) {
  Model model;
  model.seed = root.seed("seed", 0);
  if (inv.seed) {
    model.seed = *inv.seed;
    root.set("seed", model.seed);
  }
  model.alpha = root.number("alpha", 0.98);
  const double nu = root.number("nu", 18.0);
  const long s_max = root.integer("s_max", 10);
  if (s_max < 1 || s_max > 100000) usage_error("config: s_max must lie in [1, 100000]");
  const bool has_contents = root.has("contents");
  const bool has_workload = root.has("workload");
  if (has_contents == has_workload) usage_error("config: exactly one of 'contents' or 'workload' is required");

  std::size_t count = 0;
  std::optional<long> cache_size;
  if (root.has("cache_size")) cache_size = root.integer("cache_size", std::nullopt);

  if (has_contents) {
    const json& list = root.raw("contents");
    if (!list.is_array() || list.empty()) usage_error("config: 'contents' must be a non-empty array");
    for (std::size_t m = 0; m < list.size(); ++m) {
      json entry = json::object();
      Section c(list[m], entry, "contents[" + std::to_string(m) + "]");
      c.only({"lambda", "nu", "s_max"});
      Content content;
      content.id = m;
      content.lambda = c.number("lambda", std::nullopt);
      content.nu = c.number("nu", nu);
      const long cs = c.integer("s_max", s_max);
      if (cs < 1 || cs > 100000) usage_error("config: contents[" + std::to_string(m) + "].s_max must lie in [1, 100000]");
      content.s_max = static_cast<int>(cs);
      require_positive(content.nu, "contents[" + std::to_string(m) + "].nu");
      if (!(content.lambda >= 0.0)) usage_error("config: contents[" + std::to_string(m) + "].lambda must be >= 0");
      model.contents.push_back(content);
    }
    count = model.contents.size();
    const long b = cache_size.value_or(std::max<long>(1, static_cast<long>(count) / 10));
    root.integer("cache_size", b);
    model.cache_size = static_cast<int>(b);
    return model;
  }

  Section w = root.child("workload");
  w.only({"kind", "contents", "kappa", "total_rate", "path"});
  const std::string kind = w.string("kind", std::nullopt, {"zipf", "trace"});
  wc_workload* raw = nullptr;
  if (kind == "zipf") {
    const long m = w.integer("contents", std::nullopt);
    if (m < 1) usage_error("config: workload.contents must be >= 1");
    const long b = cache_size.value_or(std::max<long>(1, m / 10));
    root.integer("cache_size", b);
    model.cache_size = static_cast<int>(b);
    const double kappa = w.number("kappa", 0.9);
    const double total = w.number("total_rate", 0.8 * nu * static_cast<double>(b));
    check(wc_workload_zipf(static_cast<int>(m), kappa, total, &raw), "zipf workload");
  } else {
    const std::string path = w.string("path", std::nullopt);
    check(wc_workload_from_trace(path.c_str(), &raw), "trace '" + path + "'");
    model.from_trace = true;
  }
  model.workload.reset(raw);
  const std::size_t n = wc_workload_size(raw);
  std::vector<double> rates(n);
  std::vector<std::uint64_t> labels(n);
  check(wc_workload_rates(raw, rates.data(), n), "workload rates");
  check(wc_workload_labels(raw, labels.data(), n), "workload labels");
  if (model.from_trace) {
    const long b = cache_size.value_or(std::max<long>(1, static_cast<long>(n) / 10));
    root.integer("cache_size", b);
    model.cache_size = static_cast<int>(b);
    const long malformed = wc_workload_malformed_lines(raw);
    if (malformed > 0) std::cerr << "whittle-cache: skipped " << malformed << " malformed trace lines\n";
  }
  for (std::size_t m = 0; m < n; ++m) model.contents.push_back({labels[m], rates[m], nu, static_cast<int>(s_max)});
  return model;
}

struct LearnSettings {
  wc_learn_options options{};
  std::string algorithm;
};

LearnSettings resolve_learning(Section& root, const Invocation& inv) {
  Section l = root.child("learning");
  l.only({"algorithm", "iterations_per_threshold", "schedule", "features", "trace_stride", "telemetry", "epsilon"});
  LearnSettings out;
  wc_learn_options_default(&out.options);
  auto& o = out.options;
  const std::vector<std::string> algorithms{"q-whittle", "q+-whittle", "q+-whittle-lfa"};
  out.algorithm = l.string("algorithm", std::string("q+-whittle"), algorithms);
  if (!inv.algorithm.empty()) {
    out.algorithm = inv.algorithm;
    l.set("algorithm", out.algorithm);
  }
  o.algorithm = out.algorithm == "q-whittle" ? WC_Q_WHITTLE
                : out.algorithm == "q+-whittle" ? WC_QPLUS_WHITTLE
                                                : WC_QPLUS_WHITTLE_LFA;
  o.iterations_per_threshold = l.integer("iterations_per_threshold", o.iterations_per_threshold);
  if (inv.iterations) {
    o.iterations_per_threshold = *inv.iterations;
    l.set("iterations_per_threshold", o.iterations_per_threshold);
  }
  if (o.iterations_per_threshold < 0) usage_error("config: learning.iterations_per_threshold must be >= 0");

  Section s = l.child("schedule");
  s.only({"kind", "gamma0", "eta0", "decay_factor", "decay_period"});
  std::string kind = s.string("kind", std::string("geometric"), {"theorem1", "geometric"});
  if (!inv.schedule.empty()) {
    kind = inv.schedule;
    s.set("kind", kind);
  }
  o.schedule_kind = kind == "theorem1" ? WC_SCHEDULE_THEOREM1 : WC_SCHEDULE_GEOMETRIC;
  o.gamma0 = s.number("gamma0", o.gamma0);
  o.eta0 = s.number("eta0", o.eta0);
  o.decay_factor = s.number("decay_factor", o.decay_factor);
  o.decay_period = s.integer("decay_period", o.decay_period);

  Section f = l.child("features");
  f.only({"kind", "dim", "bandwidth"});
  std::string fkind = f.string("kind", std::string("gaussian-rbf"), {"onehot", "gaussian-rbf"});
  if (!inv.features.empty()) {
    fkind = inv.features;
    f.set("kind", fkind);
  }
  o.feature_kind = fkind == "onehot" ? WC_FEATURES_ONEHOT : WC_FEATURES_GAUSSIAN_RBF;
  o.feature_dim = static_cast<int>(f.integer("dim", fkind == "onehot" ? 0 : 20));
  o.feature_bandwidth = f.number("bandwidth", 0.0);

  o.trace_stride = l.integer("trace_stride", inv.trace_path.empty() ? 0 : 1000);
  if (!inv.trace_path.empty() && o.trace_stride == 0) {
    o.trace_stride = 1000;
    l.set("trace_stride", o.trace_stride);
  }
  if (o.trace_stride < 0) usage_error("config: learning.trace_stride must be >= 0");
  o.telemetry = l.boolean("telemetry", true) ? 1 : 0;
  o.epsilon = l.number("epsilon", o.epsilon);
  return out;
}

// ------------------------------------------------------------------ output

class Output {
 public:
  explicit Output(const std::string& path) : path_(path) {}

  std::ostream& stream() { return buffer_; }

  /// Writes the buffered text to the target; stdout when no path was given.
  void commit() {
    if (path_.empty()) {
      std::cout << buffer_.str();
      std::cout.flush();
      return;
    }
    std::ofstream file(path_, std::ios::binary);
    if (!file) throw Failure(kExitRuntime, "cannot open '" + path_ + "' for writing");
    file << buffer_.str();
    if (!file) throw Failure(kExitRuntime, "write to '" + path_ + "' failed");
  }

 private:
  std::string path_;
  std::ostringstream buffer_;
};

std::string header(const std::string& command, const json& resolved) {
  std::ostringstream os;
  os << "# whittle-cache " << wc_version() << " " << command << "\n";
  os << "# config: " << resolved.dump() << "\n";
  return os.str();
}

wc_params params_of(const Content& c, double alpha) {
  wc_params p;
  wc_params_default(&p);
  p.lambda = c.lambda;
  p.nu = c.nu;
  p.s_max = c.s_max;
  p.alpha = alpha;
  return p;
}

// ---------------------------------------------------------------- commands

int cmd_index(const Model& model, const json& resolved, const Invocation& inv) {
  Output out(inv.out_path);
  out.stream() << header("index", resolved) << "content_id,R,whittle_index,indexable\n";
  for (const auto& c : model.contents) {
    const wc_params p = params_of(c, model.alpha);
    std::vector<double> table(static_cast<std::size_t>(c.s_max + 1));
    int indexable = 0;
    const wc_status st = wc_whittle_table(&p, table.data(), table.size(), &indexable);
    if (st == WC_DEGENERATE_DENOMINATOR) {
      const long failed_at = wc_last_error_detail();
      const std::string message = wc_last_error();
      for (long r = 0; r < failed_at; ++r) {
        out.stream() << c.id << ',' << r << ',' << fmt(table[static_cast<std::size_t>(r)]) << ",unknown\n";
      }
      out.commit();
      std::cerr << "whittle-cache: content " << c.id << ": " << message << "; output stops at R=" << failed_at << "\n";
      return kExitUsage;
    }
    check(st, "content " + std::to_string(c.id));
    for (std::size_t r = 0; r < table.size(); ++r) {
      out.stream() << c.id << ',' << r << ',' << fmt(table[r]) << ',' << (indexable ? "true" : "false") << '\n';
    }
  }
  out.commit();
  return 0;
}

int cmd_learn(const Model& model, const LearnSettings& settings, const json& resolved, const Invocation& inv) {
  Output out(inv.out_path);
  const std::string head = header("learn", resolved);
  out.stream() << head << "content_id,R,whittle_index\n";
  std::optional<Output> trace;
  if (!inv.trace_path.empty()) {
    trace.emplace(inv.trace_path);
    trace->stream() << head << "content_id,n,R,W_n,gamma_n,eta_n,M_n\n";
  }
  for (std::size_t m = 0; m < model.contents.size(); ++m) {
    const auto& c = model.contents[m];
    const wc_params p = params_of(c, model.alpha);
    wc_learn_options o = settings.options;
    o.seed = wc_derive_seed(model.seed, c.id);
    wc_learn_run* raw = nullptr;
    check(wc_learn(&p, &o, &raw), "learning content " + std::to_string(c.id));
    LearnRunPtr run(raw);
    std::vector<double> indices(wc_learn_run_num_states(raw));
    check(wc_learn_run_indices(raw, indices.data(), indices.size()), "indices");
    for (std::size_t r = 0; r < indices.size(); ++r) out.stream() << c.id << ',' << r << ',' << fmt(indices[r]) << '\n';
    if (trace) {
      for (std::size_t i = 0; i < wc_learn_run_trace_length(raw); ++i) {
        wc_trace_row row;
        check(wc_learn_run_trace_row(raw, i, &row), "trace row");
        trace->stream() << c.id << ',' << row.n << ',' << row.threshold << ',' << fmt(row.w) << ',' << fmt(row.gamma)
                        << ',' << fmt(row.eta) << ',' << (row.has_lyapunov ? fmt(row.lyapunov) : "") << '\n';
      }
    }
  }
  out.commit();
  if (trace) trace->commit();
  return 0;
}

std::vector<std::vector<double>> read_index_table(const std::string& path, const Model& model) {
  std::ifstream in(path);
  if (!in) usage_error("whittle-learned policy needs an index table: cannot open '" + path + "'");
  std::map<std::uint64_t, std::size_t> position;
  for (std::size_t m = 0; m < model.contents.size(); ++m) position[model.contents[m].id] = m;
  std::vector<std::vector<double>> tables(model.contents.size());
  std::vector<std::vector<bool>> seen(model.contents.size());
  for (std::size_t m = 0; m < model.contents.size(); ++m) {
    tables[m].assign(static_cast<std::size_t>(model.contents[m].s_max + 1), 0.0);
    seen[m].assign(tables[m].size(), false);
  }
  std::string line;
  long line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line.rfind("content_id,R,whittle_index", 0) != 0) {
        usage_error("index table '" + path + "': expected header 'content_id,R,whittle_index'");
      }
      header_seen = true;
      continue;
    }
    std::stringstream row(line);
    std::string id_s, r_s, w_s;
    std::getline(row, id_s, ',');
    std::getline(row, r_s, ',');
    std::getline(row, w_s, ',');
    std::uint64_t id = 0;
    long r = 0;
    double w = 0.0;
    const bool ok = std::from_chars(id_s.data(), id_s.data() + id_s.size(), id).ec == std::errc() &&
                    std::from_chars(r_s.data(), r_s.data() + r_s.size(), r).ec == std::errc() &&
                    std::from_chars(w_s.data(), w_s.data() + w_s.size(), w).ec == std::errc();
    if (!ok) usage_error("index table '" + path + "' line " + std::to_string(line_no) + " is malformed");
    const auto it = position.find(id);
    if (it == position.end()) continue;
    auto& table = tables[it->second];
    if (r < 0 || static_cast<std::size_t>(r) >= table.size()) {
      usage_error("index table '" + path + "' line " + std::to_string(line_no) + ": state outside [0, s_max]");
    }
    table[static_cast<std::size_t>(r)] = w;
    seen[it->second][static_cast<std::size_t>(r)] = true;
  }
  for (std::size_t m = 0; m < seen.size(); ++m) {
    for (std::size_t r = 0; r < seen[m].size(); ++r) {
      if (!seen[m][r]) {
        usage_error("index table '" + path + "' has no entry for content " + std::to_string(model.contents[m].id) +
                    " at R=" + std::to_string(r));
      }
    }
  }
  return tables;
}

int cmd_simulate(const Model& model, Section& root, json& resolved, const Invocation& inv) {
  Section s = root.child("simulation");
  s.only({"horizon", "seeds", "policies", "index_table", "replay_trace"});
  double horizon = s.number("horizon", 1e4);
  if (inv.horizon) horizon = *inv.horizon;
  require_positive(horizon, "simulation.horizon");
  long seeds = s.integer("seeds", 10);
  if (inv.seeds) seeds = *inv.seeds;
  if (seeds < 1) usage_error("config: simulation.seeds must be >= 1");
  std::vector<std::string> policies{"whittle-oracle", "lru", "lfu", "random"};
  if (s.has("policies")) {
    const json& list = s.raw("policies");
    if (!list.is_array() || list.empty()) usage_error("config: simulation.policies must be a non-empty array");
    policies.clear();
    for (const auto& p : list) {
      if (!p.is_string()) usage_error("config: simulation.policies must contain strings");
      policies.push_back(p.get<std::string>());
    }
  }
  if (!inv.policies.empty()) policies = inv.policies;
  std::string index_table = s.has("index_table") ? s.string("index_table", std::nullopt) : std::string();
  if (!inv.index_table.empty()) index_table = inv.index_table;
  const bool replay = s.boolean("replay_trace", model.from_trace);
  resolved["simulation"]["horizon"] = horizon;
  resolved["simulation"]["seeds"] = seeds;
  resolved["simulation"]["policies"] = policies;
  resolved["simulation"]["index_table"] = index_table.empty() ? json(nullptr) : json(index_table);

  std::vector<PolicyPtr> handles;
  for (const auto& name : policies) {
    wc_policy* raw = nullptr;
    const wc_status st = wc_policy_from_name(name.c_str(), &raw);
    if (st != WC_OK) usage_error(wc_last_error());
    handles.emplace_back(raw);
    if (name == "whittle-learned") {
      if (index_table.empty()) {
        usage_error(
            "whittle-learned policy needs an index table: pass --index-table <file> (the final-index CSV written by "
            "'whittle-cache learn --out <file>')");
      }
      for (const auto& t : read_index_table(index_table, model)) {
        check(wc_policy_add_table(raw, t.data(), t.size()), "index table");
      }
    }
  }

  wc_system* sys_raw = nullptr;
  if (model.workload) {
    const int s_max = model.contents.front().s_max;
    check(wc_system_create(model.workload.get(), model.contents.front().nu, s_max, model.cache_size, replay ? 1 : 0,
                           &sys_raw),
          "system");
  } else {
    std::vector<double> lambda, nu;
    std::vector<int> s_max;
    for (const auto& c : model.contents) {
      lambda.push_back(c.lambda);
      nu.push_back(c.nu);
      s_max.push_back(c.s_max);
    }
    check(wc_system_create_explicit(lambda.data(), nu.data(), s_max.data(), model.contents.size(), model.cache_size,
                                    &sys_raw),
          "system");
  }
  SystemPtr system(sys_raw);

  Output out(inv.out_path);
  out.stream() << header("simulate", resolved) << "policy,seed,accumulated_cost,average_cost,events\n";
  json report = json::object();
  report["config"] = resolved;
  report["runs"] = json::array();
  for (std::size_t i = 0; i < policies.size(); ++i) {
    std::vector<double> acc, avg, events;
    for (long k = 0; k < seeds; ++k) {
      const std::uint64_t seed = model.seed + static_cast<std::uint64_t>(k);
      wc_episode* ep_raw = nullptr;
      check(wc_run_episode(system.get(), handles[i].get(), horizon, seed, &ep_raw), "policy " + policies[i]);
      EpisodePtr episode(ep_raw);
      wc_metrics m;
      check(wc_episode_metrics(ep_raw, &m), "metrics");
      if (m.capacity_violations != 0) throw Failure(kExitRuntime, "cache capacity exceeded during simulation");
      out.stream() << policies[i] << ',' << seed << ',' << fmt(m.accumulated_cost) << ',' << fmt(m.average_cost) << ','
                   << m.events << '\n';
      acc.push_back(m.accumulated_cost);
      avg.push_back(m.average_cost);
      events.push_back(static_cast<double>(m.events));
      if (!inv.json_path.empty()) {
        json run = {{"policy", policies[i]},
                    {"seed", seed},
                    {"accumulated_cost", m.accumulated_cost},
                    {"average_cost", m.average_cost},
                    {"arrivals", m.arrivals},
                    {"departures", m.departures},
                    {"dropped_arrivals", m.dropped_arrivals},
                    {"events", m.events},
                    {"max_cache_size", m.max_cache_size}};
        json occupancy = json::array();
        for (std::size_t c = 0; c < model.contents.size(); ++c) {
          std::vector<double> hist(static_cast<std::size_t>(wc_system_s_max(system.get(), c) + 1));
          check(wc_episode_occupancy(ep_raw, c, hist.data(), hist.size()), "occupancy");
          occupancy.push_back(hist);
        }
        run["occupancy"] = occupancy;
        report["runs"].push_back(run);
      }
    }
    auto mean = [](const std::vector<double>& xs) {
      double t = 0.0;
      for (double x : xs) t += x;
      return t / static_cast<double>(xs.size());
    };
    auto stderr_of = [&](const std::vector<double>& xs) {
      if (xs.size() < 2) return 0.0;
      const double mu = mean(xs);
      double ss = 0.0;
      for (double x : xs) ss += (x - mu) * (x - mu);
      return std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
    };
    out.stream() << policies[i] << ",mean," << fmt(mean(acc)) << ',' << fmt(mean(avg)) << ',' << fmt(mean(events))
                 << '\n';
    out.stream() << policies[i] << ",stderr," << fmt(stderr_of(acc)) << ',' << fmt(stderr_of(avg)) << ','
                 << fmt(stderr_of(events)) << '\n';
  }
  out.commit();
  if (!inv.json_path.empty()) {
    Output js(inv.json_path);
    js.stream() << report.dump(2) << '\n';
    js.commit();
  }
  return 0;
}

int cmd_workload(const Model& model, Section& root, json& resolved, const Invocation& inv) {
  Section t = root.child("trace");
  t.only({"horizon"});
  double horizon = t.number("horizon", 1e4);
  if (inv.horizon) horizon = *inv.horizon;
  require_positive(horizon, "trace.horizon");
  resolved["trace"]["horizon"] = horizon;
  const std::string head = header("workload", resolved);

  Output out(inv.out_path);
  out.stream() << head << "content_id,rate\n";
  for (const auto& c : model.contents) out.stream() << c.id << ',' << fmt(c.lambda) << '\n';

  if (!inv.gen_trace.empty()) {
    const wc_workload* source = model.workload.get();
    if (source == nullptr) {
      usage_error("--gen-trace needs a 'workload' block (zipf or trace) in the config");
    }
    size_t written = 0;
    check(wc_workload_write_trace(source, horizon, model.seed, inv.gen_trace.c_str(), head.c_str(), &written),
          "trace generation");
    std::cerr << "whittle-cache: wrote " << written << " requests to " << inv.gen_trace << "\n";
  }
  out.commit();
  return 0;
}

int run(const Invocation& inv) {
  const json raw = load_json(inv.config_path);
  json resolved = json::object();
  Section root(raw, resolved, "");
  root.only({"seed", "alpha", "nu", "s_max", "cache_size", "contents", "workload", "learning", "simulation", "trace"});
  Model model = resolve_model(root, inv);
  if (raw.contains("contents")) {
    json list = json::array();
    for (const auto& c : model.contents) list.push_back({{"lambda", c.lambda}, {"nu", c.nu}, {"s_max", c.s_max}});
    resolved["contents"] = list;
  }
  if (inv.command == "index") return cmd_index(model, resolved, inv);
  if (inv.command == "learn") {
    const LearnSettings settings = resolve_learning(root, inv);
    return cmd_learn(model, settings, resolved, inv);
  }
  if (inv.command == "simulate") return cmd_simulate(model, root, resolved, inv);
  return cmd_workload(model, root, resolved, inv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whittle-index caching: exact indices, learners and a cache simulator", "whittle-cache"};
  app.set_version_flag("--version", std::string(wc_version()));
  app.require_subcommand(1, 1);
  Invocation inv;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", inv.seed, "master seed (overrides config 'seed')");
    sub->add_option("--out", inv.out_path, "output CSV (default: stdout)");
  };

  auto* index = app.add_subcommand("index", "closed-form Whittle index table per content");
  common(index);

  auto* learn = app.add_subcommand("learn", "learn index tables with Q-Whittle, Q+-Whittle or Q+-Whittle-LFA");
  common(learn);
  learn->add_option("--algorithm", inv.algorithm, "learner")
      ->check(CLI::IsMember({"q-whittle", "q+-whittle", "q+-whittle-lfa"}));
  learn->add_option("--iterations", inv.iterations, "epochs per threshold (overrides learning.iterations_per_threshold)")
      ->check(CLI::NonNegativeNumber);
  learn->add_option("--features", inv.features, "LFA feature map")->check(CLI::IsMember({"onehot", "gaussian-rbf"}));
  learn->add_option("--schedule", inv.schedule, "step-size schedule")
      ->check(CLI::IsMember({"theorem1", "geometric"}));
  learn->add_option("--trace", inv.trace_path, "write the learning trace CSV here");

  auto* simulate = app.add_subcommand("simulate", "compare cache policies on the multi-content system");
  common(simulate);
  simulate->add_option("--policy", inv.policies, "policies (whittle-oracle, whittle-learned, lru, lfu, random)")
      ->delimiter(',');
  simulate->add_option("--seeds", inv.seeds, "number of seeds, run as seed, seed+1, ...")->check(CLI::PositiveNumber);
  simulate->add_option("--horizon", inv.horizon, "simulated time per episode")->check(CLI::PositiveNumber);
  simulate->add_option("--index-table", inv.index_table, "final-index CSV from 'learn' for whittle-learned");
  simulate->add_option("--json", inv.json_path, "also write full metrics with occupancy histograms as JSON");

  auto* workload = app.add_subcommand("workload", "print per-content rates or generate a synthetic trace");
  common(workload);
  workload->add_option("--gen-trace", inv.gen_trace, "write a Poisson request trace to this file");
  workload->add_option("--horizon", inv.horizon, "trace length in time units")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }
  for (auto* sub : {index, learn, simulate, workload}) {
    if (sub->parsed()) inv.command = sub->get_name();
  }
  try {
    return run(inv);
  } catch (const Failure& e) {
    std::cerr << "whittle-cache: " << e.what() << "\n";
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "whittle-cache: " << e.what() << "\n";
    return kExitRuntime;
  }
}
