#include "affdesk/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "affdesk/io.hpp"

namespace aff {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string dstr(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ConfigError("cannot format double");
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& v) {
  double out;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("bad number for '" + key + "': " + v);
  return out;
}

long long parse_ll(const std::string& key, const std::string& v) {
  long long out;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("bad integer for '" + key + "': " + v);
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("bad unsigned integer for '" + key + "': " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("bad boolean for '" + key + "': " + v);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

std::string goals_to_string(const std::vector<GoalSpec>& goals) {
  std::vector<std::string> parts;
  for (const auto& g : goals) {
    std::string p = g.object + ":" + dstr(g.fraction);
    if (!g.opening) p += ":close";
    parts.push_back(p);
  }
  return join(parts);
}

std::vector<GoalSpec> goals_from_string(const std::string& key,
                                        const std::string& v) {
  std::vector<GoalSpec> out;
  for (const std::string& part : split(v, ',')) {
    const auto fields = split(part, ':');
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty())
      throw ConfigError("bad goal for '" + key + "': " + part);
    GoalSpec g;
    g.object = fields[0];
    g.fraction = parse_double(key, fields[1]);
    if (fields.size() == 3) {
      if (fields[2] != "close")
        throw ConfigError("bad goal direction for '" + key + "': " + part);
      g.opening = false;
    }
    out.push_back(g);
  }
  return out;
}

using Get = std::function<std::string(const RunConfig&)>;
using Set = std::function<void(RunConfig&, const std::string&, const std::string&)>;

struct FieldDef {
  const char* section;
  const char* key;
  Get get;
  Set set;
};

FieldDef f_double(const char* sec, const char* key, double RunConfig::* ptr) {
  return {sec, key, [ptr](const RunConfig& c) { return dstr(c.*ptr); },
          [ptr](RunConfig& c, const std::string& k, const std::string& v) {
            c.*ptr = parse_double(k, v);
          }};
}

template <typename T, typename M>
FieldDef f_sub_double(const char* sec, const char* key, T RunConfig::* sub,
                      M T::* ptr) {
  return {sec, key,
          [sub, ptr](const RunConfig& c) { return dstr(c.*sub.*ptr); },
          [sub, ptr](RunConfig& c, const std::string& k, const std::string& v) {
            c.*sub.*ptr = parse_double(k, v);
          }};
}

template <typename T>
FieldDef f_sub_int(const char* sec, const char* key, T RunConfig::* sub,
                   int T::* ptr) {
  return {sec, key,
          [sub, ptr](const RunConfig& c) { return std::to_string(c.*sub.*ptr); },
          [sub, ptr](RunConfig& c, const std::string& k, const std::string& v) {
            c.*sub.*ptr = static_cast<int>(parse_ll(k, v));
          }};
}

FieldDef f_int(const char* sec, const char* key, int RunConfig::* ptr) {
  return {sec, key,
          [ptr](const RunConfig& c) { return std::to_string(c.*ptr); },
          [ptr](RunConfig& c, const std::string& k, const std::string& v) {
            c.*ptr = static_cast<int>(parse_ll(k, v));
          }};
}

const std::vector<FieldDef>& field_defs() {
  static const std::vector<FieldDef> defs = [] {
    std::vector<FieldDef> d;
    d.push_back({"run", "seed",
                 [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.seed = parse_u64(k, v);
                 }});
    d.push_back({"run", "out",
                 [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string&, const std::string& v) {
                   c.out_dir = v;
                 }});

    d.push_back(f_sub_int("world", "image_size", &RunConfig::world,
                          &WorldConfig::image_size));
    d.push_back({"world", "objects",
                 [](const RunConfig& c) { return join(c.world.objects); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.world.objects = split(v, ',');
                   if (c.world.objects.empty())
                     throw ConfigError("'" + k + "' must list object kinds");
                 }});
    d.push_back(f_sub_double("world", "layout_jitter", &RunConfig::world,
                             &WorldConfig::layout_jitter));
    d.push_back(f_sub_double("world", "egomotion_amplitude", &RunConfig::world,
                             &WorldConfig::egomotion_amplitude));
    d.push_back(f_sub_double("world", "hand_jitter_px", &RunConfig::world,
                             &WorldConfig::hand_jitter_px));
    d.push_back(f_sub_double("world", "contact_flip_rate", &RunConfig::world,
                             &WorldConfig::contact_flip_rate));
    d.push_back(f_sub_int("world", "n_episodes", &RunConfig::world,
                          &WorldConfig::n_episodes));
    d.push_back(f_sub_double("world", "grasp_radius_px", &RunConfig::world,
                             &WorldConfig::grasp_radius_px));
    d.push_back({"world", "goals",
                 [](const RunConfig& c) { return goals_to_string(c.world.goals); },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.world.goals = goals_from_string(k, v);
                 }});

    d.push_back(f_sub_int("extract", "window", &RunConfig::extract,
                          &ExtractConfig::window));
    d.push_back(f_sub_int("extract", "polyorder", &RunConfig::extract,
                          &ExtractConfig::polyorder));
    d.push_back(f_sub_double("extract", "threshold", &RunConfig::extract,
                             &ExtractConfig::threshold));
    d.push_back(f_sub_int("extract", "gmm_k", &RunConfig::extract,
                          &ExtractConfig::gmm_k));
    d.push_back(f_sub_double("extract", "fixed_std_frac", &RunConfig::extract,
                             &ExtractConfig::fixed_std_frac));
    d.push_back(f_sub_int("extract", "gmm_max_iters", &RunConfig::extract,
                          &ExtractConfig::gmm_max_iters));
    d.push_back(f_sub_double("extract", "gmm_tol", &RunConfig::extract,
                             &ExtractConfig::gmm_tol));
    d.push_back({"extract", "homography",
                 [](const RunConfig& c) {
                   return std::string(
                       c.extract.homography == HomographyMode::Estimated
                           ? "estimated"
                           : "exact");
                 },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "estimated")
                     c.extract.homography = HomographyMode::Estimated;
                   else if (v == "exact")
                     c.extract.homography = HomographyMode::ExactPose;
                   else
                     throw ConfigError("'" + k +
                                       "' must be 'estimated' or 'exact'");
                 }});
    d.push_back(f_double("extract", "crop_fraction", &RunConfig::crop_fraction));
    d.push_back(f_int("extract", "samples_per_label",
                      &RunConfig::samples_per_label));

    d.push_back(f_int("model", "crop_size", &RunConfig::crop_size));
    d.push_back({"model", "attention",
                 [](const RunConfig& c) {
                   return std::string(c.attention ? "true" : "false");
                 },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.attention = parse_bool(k, v);
                 }});

    d.push_back(f_sub_double("train", "learning_rate", &RunConfig::train,
                             &TrainConfig::learning_rate));
    d.push_back(f_sub_int("train", "epochs", &RunConfig::train,
                          &TrainConfig::epochs));
    d.push_back(f_sub_int("train", "batch_size", &RunConfig::train,
                          &TrainConfig::batch_size));
    d.push_back(f_sub_double("train", "lambda_traj", &RunConfig::train,
                             &TrainConfig::lambda_traj));

    d.push_back(f_sub_int("paradigm", "iterations", &RunConfig::paradigm,
                          &ParadigmConfig::iterations));
    d.push_back(f_sub_int("paradigm", "n_initial", &RunConfig::paradigm,
                          &ParadigmConfig::n_initial));
    d.push_back(f_sub_int("paradigm", "n_per_iter", &RunConfig::paradigm,
                          &ParadigmConfig::n_per_iter));
    d.push_back(f_sub_int("paradigm", "top_k", &RunConfig::paradigm,
                          &ParadigmConfig::top_k));
    d.push_back(f_sub_double("paradigm", "p_model", &RunConfig::paradigm,
                             &ParadigmConfig::p_model));
    d.push_back(f_sub_double("paradigm", "noise_c", &RunConfig::paradigm,
                             &ParadigmConfig::noise_c));
    d.push_back(f_sub_double("paradigm", "noise_tau", &RunConfig::paradigm,
                             &ParadigmConfig::noise_tau));
    d.push_back(f_sub_int("paradigm", "n_queries", &RunConfig::paradigm,
                          &ParadigmConfig::n_queries));
    d.push_back(f_int("paradigm", "knn_k", &RunConfig::knn_k));
    d.push_back(f_int("paradigm", "imitation_rollouts",
                      &RunConfig::imitation_rollouts));
    d.push_back(f_int("paradigm", "bc_top_k", &RunConfig::bc_top_k));
    d.push_back(f_sub_int("paradigm", "bc_epochs", &RunConfig::bc,
                          &BcConfig::epochs));
    d.push_back(f_sub_double("paradigm", "bc_learning_rate", &RunConfig::bc,
                             &BcConfig::learning_rate));
    d.push_back(f_sub_double("paradigm", "bc_beta", &RunConfig::bc,
                             &BcConfig::beta));
    d.push_back(f_sub_int("paradigm", "bc_latent_dim", &RunConfig::bc,
                          &BcConfig::latent_dim));

    d.push_back(f_sub_int("dqn", "steps", &RunConfig::dqn, &DqnConfig::steps));
    d.push_back(f_sub_int("dqn", "batch", &RunConfig::dqn, &DqnConfig::batch));
    d.push_back(f_sub_int("dqn", "replay_capacity", &RunConfig::dqn,
                          &DqnConfig::replay_capacity));
    d.push_back(f_sub_int("dqn", "target_sync", &RunConfig::dqn,
                          &DqnConfig::target_sync));
    d.push_back(f_sub_double("dqn", "learning_rate", &RunConfig::dqn,
                             &DqnConfig::learning_rate));
    d.push_back(f_sub_double("dqn", "eps_hi", &RunConfig::dqn,
                             &DqnConfig::eps_hi));
    d.push_back(f_sub_double("dqn", "eps_lo", &RunConfig::dqn,
                             &DqnConfig::eps_lo));
    d.push_back({"dqn", "negate_reward",
                 [](const RunConfig& c) {
                   return std::string(c.dqn.negate_reward ? "true" : "false");
                 },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.dqn.negate_reward = parse_bool(k, v);
                 }});
    d.push_back(f_int("dqn", "action_q", &RunConfig::action_q));
    d.push_back(f_int("dqn", "action_nc", &RunConfig::action_nc));
    d.push_back(f_int("dqn", "action_ntau", &RunConfig::action_ntau));
    return d;
  }();
  return defs;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.crop_size = crop_size;
  m.attention = attention;
  m.fixed_std_frac = extract.fixed_std_frac;
  return m;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& msg) { throw ConfigError(msg); };
  if (world.image_size < 16) bad("image_size must be >= 16");
  if (world.n_episodes < 0) bad("n_episodes must be >= 0");
  if (world.contact_flip_rate < 0.0 || world.contact_flip_rate >= 1.0)
    bad("contact_flip_rate must lie in [0, 1)");
  if (world.grasp_radius_px <= 0.0) bad("grasp_radius_px must be positive");
  if (world.goals.empty()) bad("at least one goal must be configured");
  for (const auto& g : world.goals)
    if (g.fraction <= 0.0 || g.fraction > 1.0)
      bad("goal fraction must lie in (0, 1]");
  if (extract.window < 3 || extract.window % 2 == 0)
    bad("window must be odd and >= 3");
  if (extract.polyorder < 0 || extract.polyorder >= extract.window)
    bad("polyorder must lie in [0, window)");
  if (extract.threshold <= 0.0 || extract.threshold >= 1.0)
    bad("threshold must lie in (0, 1)");
  if (extract.gmm_k < 1) bad("gmm_k must be >= 1");
  if (extract.fixed_std_frac <= 0.0) bad("fixed_std_frac must be positive");
  if (crop_fraction <= 0.0 || crop_fraction > 1.0)
    bad("crop_fraction must lie in (0, 1]");
  if (samples_per_label < 1) bad("samples_per_label must be >= 1");
  if (std::lround(crop_fraction * world.image_size) != crop_size)
    bad("crop_size must equal round(crop_fraction * image_size)");
  model_config().validate();
  if (train.learning_rate < 0.0) bad("learning_rate must be >= 0");
  if (train.epochs < 1) bad("epochs must be >= 1");
  if (train.batch_size < 1) bad("batch_size must be >= 1");
  if (paradigm.iterations < 0) bad("iterations must be >= 0");
  if (paradigm.top_k < 1) bad("top_k must be >= 1");
  if (paradigm.n_initial < paradigm.top_k ||
      paradigm.n_per_iter < paradigm.top_k)
    bad("n_initial and n_per_iter must be >= top_k");
  if (paradigm.p_model < 0.0 || paradigm.p_model > 1.0)
    bad("p_model must lie in [0, 1]");
  if (paradigm.n_queries < 1) bad("n_queries must be >= 1");
  if (knn_k < 1) bad("knn_k must be >= 1");
  if (imitation_rollouts < knn_k) bad("imitation_rollouts must be >= knn_k");
  if (bc_top_k < 1) bad("bc_top_k must be >= 1");
  if (bc.epochs < 0) bad("bc_epochs must be >= 0");
  if (bc.latent_dim < 1) bad("bc_latent_dim must be >= 1");
  if (dqn.steps < 1) bad("dqn steps must be >= 1");
  if (dqn.batch < 1 || dqn.replay_capacity < 1 || dqn.target_sync < 1)
    bad("dqn batch, replay_capacity and target_sync must be >= 1");
  if (dqn.eps_hi < dqn.eps_lo || dqn.eps_lo < 0.0 || dqn.eps_hi > 1.0)
    bad("dqn epsilon schedule must satisfy 0 <= eps_lo <= eps_hi <= 1");
  if (action_q < std::max(action_nc, action_ntau) || action_nc < 1 ||
      action_ntau < 1)
    bad("action_q must be >= action_nc and action_ntau (both >= 1)");
}

RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::string section;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      raw[section];
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) +
                        ": key outside any section");
    raw[section][trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }

  RunConfig cfg;
  std::set<std::pair<std::string, std::string>> known;
  for (const FieldDef& f : field_defs()) {
    known.insert({f.section, f.key});
    auto sit = raw.find(f.section);
    if (sit == raw.end()) continue;
    auto kit = sit->second.find(f.key);
    if (kit == sit->second.end()) continue;
    f.set(cfg, std::string(f.section) + "." + f.key, kit->second);
  }
  for (const auto& [sec, kv] : raw) {
    bool sec_known = false;
    for (const FieldDef& f : field_defs())
      if (sec == f.section) sec_known = true;
    if (!sec_known) throw ConfigError("unknown section [" + sec + "]");
    for (const auto& [key, value] : kv)
      if (!known.count({sec, key}))
        throw ConfigError("unknown key '" + key + "' in section [" + sec + "]");
  }
  cfg.validate();
  return cfg;
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  std::string current;
  for (const FieldDef& f : field_defs()) {
    if (f.section != current) {
      if (!out.empty()) out += "\n";
      out += "[" + std::string(f.section) + "]\n";
      current = f.section;
    }
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path));
}

}  // namespace aff
