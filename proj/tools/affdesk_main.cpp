#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "affdesk/config.hpp"
#include "affdesk/pipeline.hpp"

namespace {

aff::GoalSpec parse_goal_flag(const std::string& text) {
  const size_t c1 = text.find(':');
  if (c1 == std::string::npos || c1 == 0)
    throw aff::ConfigError("--goal expects OBJECT:THRESHOLD, got: " + text);
  aff::GoalSpec goal;
  goal.object = text.substr(0, c1);
  std::string rest = text.substr(c1 + 1);
  const size_t c2 = rest.find(':');
  if (c2 != std::string::npos) {
    const std::string dir = rest.substr(c2 + 1);
    if (dir != "close")
      throw aff::ConfigError("--goal direction must be 'close', got: " + dir);
    goal.opening = false;
    rest = rest.substr(0, c2);
  }
  char* end = nullptr;
  goal.fraction = std::strtod(rest.c_str(), &end);
  if (end == rest.c_str() || *end != '\0')
    throw aff::ConfigError("--goal threshold is not a number: " + rest);
  return goal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale visual affordance pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, mode, goal_str;
  unsigned long long seed = 0;
  bool seed_set = false, out_set = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI config file");
    sub->add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_dir, "override the output directory")
        ->each([&](const std::string&) { out_set = true; });
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate an episode dataset");
  CLI::App* ext = app.add_subcommand(
      "extract", "extract affordance labels and training samples");
  CLI::App* trn = app.add_subcommand("train", "train the affordance model");
  CLI::App* par =
      app.add_subcommand("paradigm", "run a robot-learning paradigm");
  CLI::App* rep =
      app.add_subcommand("report", "render SVG charts and a summary table");
  for (CLI::App* sub : {gen, ext, trn, par, rep}) add_common(sub);
  par->add_option("--mode", mode, "one of imitate|explore|goal|dqn")
      ->required();
  par->add_option("--goal", goal_str,
                  "goal override as OBJECT:THRESHOLD[:close]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    aff::RunConfig cfg;
    if (!config_path.empty()) cfg = aff::load_run_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (out_set) cfg.out_dir = out_dir;
    cfg.validate();

    std::optional<aff::GoalSpec> goal;
    if (!goal_str.empty()) goal = parse_goal_flag(goal_str);

    if (gen->parsed()) {
      aff::cmd_gen_data(cfg);
    } else if (ext->parsed()) {
      aff::cmd_extract(cfg);
    } else if (trn->parsed()) {
      aff::cmd_train(cfg);
    } else if (par->parsed()) {
      aff::cmd_paradigm(cfg, mode, goal);
    } else if (rep->parsed()) {
      aff::cmd_report(cfg);
    }
    return 0;
  } catch (const aff::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const aff::IoError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const aff::SchemaError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const aff::EmptyDataset& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const aff::InsufficientData& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const aff::UnknownObject& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}
