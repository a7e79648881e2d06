#include "affdesk/pipeline.hpp"

#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "affdesk/io.hpp"
#include "affdesk/learn.hpp"
#include "affdesk/model.hpp"
#include "affdesk/report.hpp"

namespace aff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create directory: " + dir.string());
}

std::string fname(const char* fmt, int a, int b = 0) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, a, b);
  return buf;
}

json pt_json(Point2 p) { return json::array({p.x, p.y}); }

Point2 json_pt(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

json pts_json(const std::vector<Point2>& pts) {
  json out = json::array();
  for (const Point2& p : pts) out.push_back(pt_json(p));
  return out;
}

std::vector<Point2> json_pts(const json& j) {
  std::vector<Point2> out;
  for (const auto& e : j) out.push_back(json_pt(e));
  return out;
}

std::vector<std::string> jsonl_lines(const std::string& text) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    if (nl > pos) out.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

json parse_line(const std::string& line, const std::string& file) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw SchemaError(file + ": " + e.what());
  }
}

std::string config_hash_hex(const RunConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a(serialize_run_config(cfg))));
  return buf;
}

}  // namespace

// ---- episode dataset ----

void save_episode_dataset(const fs::path& dir,
                          const std::vector<Episode>& episodes,
                          const RunConfig& cfg) {
  ensure_dir(dir);
  ensure_dir(dir / "images");

  json manifest;
  manifest["command"] = "gen-data";
  manifest["config_hash"] = config_hash_hex(cfg);
  manifest["image_size"] = cfg.world.image_size;
  manifest["n_episodes"] = static_cast<int>(episodes.size());
  manifest["seed"] = cfg.seed;
  write_text_file(dir / "manifest.json", manifest.dump() + "\n");

  std::string index;
  for (const Episode& ep : episodes) {
    json row;
    row["id"] = ep.id;
    json frames = json::array();
    for (size_t t = 0; t < ep.frames.size(); ++t) {
      const Frame& fr = ep.frames[t];
      const std::string rel =
          "images/" + fname("ep%04d_f%02d.pgm", ep.id, static_cast<int>(t));
      write_pgm(dir / rel, fr.image);
      json jf;
      jf["image"] = rel;
      jf["camera"] = {{"angle", fr.camera.angle},
                      {"scale", fr.camera.scale},
                      {"t", pt_json(fr.camera.t)}};
      jf["landmarks"] = pts_json(fr.landmarks);
      json objs = json::array();
      for (const ObjectObs& o : fr.objects)
        objs.push_back({{"name", o.name},
                        {"center", pt_json(o.handle_center)},
                        {"half", o.handle_half}});
      jf["objects"] = objs;
      if (fr.hand)
        jf["hand"] = {{"center", pt_json(fr.hand->center)},
                      {"half", fr.hand->half_size},
                      {"contact", fr.hand->contact_flag}};
      frames.push_back(std::move(jf));
    }
    row["frames"] = std::move(frames);
    row["ground_truth"] = {
        {"t_contact", ep.ground_truth.t_contact},
        {"contact_points", pts_json(ep.ground_truth.contact_points)},
        {"post_contact_track", pts_json(ep.ground_truth.post_contact_track)},
        {"target_object", ep.ground_truth.target_object}};
    index += row.dump() + "\n";
  }
  write_text_file(dir / "episodes.jsonl", index);
}

std::vector<Episode> load_episode_dataset(const fs::path& dir,
                                          bool with_ground_truth) {
  const fs::path index = dir / "episodes.jsonl";
  const std::string text = read_text_file(index);
  std::vector<Episode> episodes;
  for (const std::string& line : jsonl_lines(text)) {
    const json row = parse_line(line, index.string());
    try {
      Episode ep;
      ep.id = row.at("id").get<int>();
      for (const json& jf : row.at("frames")) {
        Frame fr;
        fr.image = read_pgm(dir / jf.at("image").get<std::string>());
        const json& cam = jf.at("camera");
        fr.camera.angle = cam.at("angle").get<double>();
        fr.camera.scale = cam.at("scale").get<double>();
        fr.camera.t = json_pt(cam.at("t"));
        fr.landmarks = json_pts(jf.at("landmarks"));
        for (const json& jo : jf.at("objects")) {
          ObjectObs o;
          o.name = jo.at("name").get<std::string>();
          o.handle_center = json_pt(jo.at("center"));
          o.handle_half = jo.at("half").get<double>();
          fr.objects.push_back(std::move(o));
        }
        if (jf.contains("hand")) {
          HandObs h;
          h.center = json_pt(jf.at("hand").at("center"));
          h.half_size = jf.at("hand").at("half").get<double>();
          h.contact_flag = jf.at("hand").at("contact").get<int>();
          fr.hand = h;
        }
        ep.frames.push_back(std::move(fr));
      }
      if (with_ground_truth) {
        const json& gt = row.at("ground_truth");
        ep.ground_truth.t_contact = gt.at("t_contact").get<int>();
        ep.ground_truth.contact_points = json_pts(gt.at("contact_points"));
        ep.ground_truth.post_contact_track =
            json_pts(gt.at("post_contact_track"));
        ep.ground_truth.target_object = gt.at("target_object").get<int>();
      }
      episodes.push_back(std::move(ep));
    } catch (const json::exception& e) {
      throw SchemaError(index.string() + ": " + e.what());
    }
  }
  return episodes;
}

// ---- labels ----

void save_labels(const fs::path& path,
                 const std::vector<AffordanceLabel>& labels) {
  std::string out;
  for (const AffordanceLabel& lab : labels) {
    json row;
    row["episode_id"] = lab.episode_id;
    row["reference_frame"] = lab.reference_frame;
    row["means"] = pts_json(lab.contact_gmm.means);
    row["weights"] = lab.contact_gmm.weights;
    row["waypoints"] = pts_json(lab.waypoints);
    out += row.dump() + "\n";
  }
  write_text_file(path, out);
}

std::vector<AffordanceLabel> load_labels(const fs::path& path,
                                         double fixed_std) {
  std::vector<AffordanceLabel> out;
  for (const std::string& line : jsonl_lines(read_text_file(path))) {
    const json row = parse_line(line, path.string());
    try {
      AffordanceLabel lab;
      lab.episode_id = row.at("episode_id").get<int>();
      lab.reference_frame = row.at("reference_frame").get<int>();
      lab.contact_gmm.means = json_pts(row.at("means"));
      lab.contact_gmm.weights =
          row.at("weights").get<std::vector<double>>();
      lab.contact_gmm.fixed_std = fixed_std;
      lab.waypoints = json_pts(row.at("waypoints"));
      out.push_back(std::move(lab));
    } catch (const json::exception& e) {
      throw SchemaError(path.string() + ": " + e.what());
    }
  }
  return out;
}

// ---- training samples ----

void save_training_samples(const fs::path& dir,
                           const std::vector<TrainingSample>& samples) {
  ensure_dir(dir);
  ensure_dir(dir / "crops");
  std::string index;
  for (size_t i = 0; i < samples.size(); ++i) {
    const TrainingSample& s = samples[i];
    const std::string rel = "crops/" + fname("s%06d.pgm", static_cast<int>(i));
    write_pgm(dir / rel, s.crop);
    json row;
    row["crop"] = rel;
    row["offset"] = pt_json(s.crop_offset);
    row["means"] = pts_json(s.target_means);
    row["weights"] = s.target_weights;
    row["waypoints"] = pts_json(s.target_waypoints);
    index += row.dump() + "\n";
  }
  write_text_file(dir / "samples.jsonl", index);
}

std::vector<TrainingSample> load_training_samples(const fs::path& dir) {
  const fs::path index = dir / "samples.jsonl";
  std::vector<TrainingSample> out;
  for (const std::string& line : jsonl_lines(read_text_file(index))) {
    const json row = parse_line(line, index.string());
    try {
      TrainingSample s;
      s.crop = read_pgm(dir / row.at("crop").get<std::string>());
      s.crop_offset = json_pt(row.at("offset"));
      s.target_means = json_pts(row.at("means"));
      s.target_weights = row.at("weights").get<std::vector<double>>();
      s.target_waypoints = json_pts(row.at("waypoints"));
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw SchemaError(index.string() + ": " + e.what());
    }
  }
  return out;
}

// ---- rollouts ----

void save_rollouts(const fs::path& dir,
                   const std::vector<RolloutRecord>& rollouts) {
  ensure_dir(dir);
  ensure_dir(dir / "images");
  std::string index;
  for (const RolloutRecord& r : rollouts) {
    json row;
    row["id"] = r.id;
    const std::string init_rel = "images/" + fname("r%04d_init.pgm", r.id);
    write_pgm(dir / init_rel, r.initial_image);
    row["initial"] = init_rel;
    json obs = json::array(), masks = json::array();
    for (size_t i = 0; i < r.observations.size(); ++i) {
      const std::string rel =
          "images/" + fname("r%04d_o%02d.pgm", r.id, static_cast<int>(i));
      write_pgm(dir / rel, r.observations[i]);
      obs.push_back(rel);
    }
    for (size_t i = 0; i < r.observation_masks.size(); ++i) {
      const std::string rel =
          "images/" + fname("r%04d_m%02d.pgm", r.id, static_cast<int>(i));
      write_pgm(dir / rel, r.observation_masks[i]);
      masks.push_back(rel);
    }
    row["observations"] = std::move(obs);
    row["masks"] = std::move(masks);
    row["contact"] = pt_json(r.contact);
    row["waypoints"] = pts_json(r.waypoints);
    row["rotation"] = r.rotation_choice;
    row["joint_displacement"] = r.joint_displacement;
    json succ = json::array();
    for (bool s : r.success) succ.push_back(s);
    row["success"] = std::move(succ);
    index += row.dump() + "\n";
  }
  write_text_file(dir / "rollouts.jsonl", index);
}

std::vector<RolloutRecord> load_rollouts(const fs::path& dir) {
  const fs::path index = dir / "rollouts.jsonl";
  std::vector<RolloutRecord> out;
  for (const std::string& line : jsonl_lines(read_text_file(index))) {
    const json row = parse_line(line, index.string());
    try {
      RolloutRecord r;
      r.id = row.at("id").get<int>();
      r.initial_image = read_pgm(dir / row.at("initial").get<std::string>());
      for (const json& rel : row.at("observations"))
        r.observations.push_back(read_pgm(dir / rel.get<std::string>()));
      for (const json& rel : row.at("masks"))
        r.observation_masks.push_back(read_pgm(dir / rel.get<std::string>()));
      r.contact = json_pt(row.at("contact"));
      r.waypoints = json_pts(row.at("waypoints"));
      r.rotation_choice = row.at("rotation").get<int>();
      r.joint_displacement =
          row.at("joint_displacement").get<std::vector<double>>();
      for (const json& s : row.at("success"))
        r.success.push_back(s.get<bool>());
      if (r.observations.empty())
        throw SchemaError(index.string() + ": rollout without observations");
      r.terminal_image = r.observations.back();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw SchemaError(index.string() + ": " + e.what());
    }
  }
  return out;
}

// ---- commands ----

void cmd_gen_data(const RunConfig& cfg) {
  const fs::path out = cfg.out_dir;
  ensure_dir(out);
  Rng rng(cfg.seed);
  const Scene scene = make_scene(cfg.world, rng);
  EpisodeNoise noise;
  noise.contact_flip_rate = cfg.world.contact_flip_rate;
  noise.hand_jitter_px = cfg.world.hand_jitter_px;
  noise.egomotion_amplitude = cfg.world.egomotion_amplitude;

  std::vector<Episode> episodes;
  const int n_obj = static_cast<int>(scene.objects.size());
  for (int i = 0; i < cfg.world.n_episodes; ++i) {
    Rng er = rng.split(i);
    Episode ep = script_human_episode(scene, i % n_obj, noise, er);
    ep.id = i;
    episodes.push_back(std::move(ep));
  }
  save_episode_dataset(out / "dataset", episodes, cfg);
  std::printf("episodes=%d dir=%s\n", static_cast<int>(episodes.size()),
              (out / "dataset").string().c_str());
}

ExtractCounts cmd_extract(const RunConfig& cfg) {
  const fs::path out = cfg.out_dir;
  const auto episodes = load_episode_dataset(out / "dataset", false);

  ExtractConfig ec = cfg.extract;
  ec.gmm_seed = cfg.seed;
  std::vector<AffordanceLabel> labels;
  std::vector<LabeledImage> labeled;
  ExtractCounts counts;
  for (const Episode& ep : episodes) {
    try {
      AffordanceLabel lab = extract_label(ep, ec);
      const ReferenceFrame ref = select_reference_frame(ep);
      labeled.push_back({reference_image(ep, ref), lab});
      labels.push_back(std::move(lab));
      ++counts.extracted;
    } catch (const NoContact&) {
      ++counts.no_contact;
    } catch (const DiscardEpisode&) {
      ++counts.out_of_frame;
    } catch (const OutOfFrame&) {
      ++counts.out_of_frame;
    }
  }
  save_labels(out / "labels.jsonl", labels);

  std::vector<TrainingSample> samples;
  if (!labeled.empty()) {
    Rng srng(cfg.seed ^ 0x637260f1b0a1c5ULL);
    samples = make_training_samples(labeled, cfg.crop_fraction,
                                    cfg.samples_per_label, srng);
  }
  save_training_samples(out / "samples", samples);
  std::printf("extracted=%d no_contact=%d out_of_frame=%d samples=%d\n",
              counts.extracted, counts.no_contact, counts.out_of_frame,
              static_cast<int>(samples.size()));
  return counts;
}

void cmd_train(const RunConfig& cfg) {
  const fs::path out = cfg.out_dir;
  const auto samples = load_training_samples(out / "samples");
  if (samples.empty())
    throw EmptyDataset("no training samples under " +
                       (out / "samples").string());

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const TrainResult res = train(samples, cfg.model_config(), tc);
  save_checkpoint(out / "checkpoint.bin", res.params);

  CsvTable loss;
  loss.header = {"epoch", "contact_loss", "traj_loss"};
  for (const LossRow& row : res.curve)
    loss.rows.push_back({std::to_string(row.epoch),
                         format_double(row.contact_loss, 9),
                         format_double(row.traj_loss, 9)});
  write_csv(out / "loss.csv", loss);
  std::printf("samples=%d epochs=%d final_contact=%s final_traj=%s\n",
              static_cast<int>(samples.size()), tc.epochs,
              format_double(res.curve.back().contact_loss, 6).c_str(),
              format_double(res.curve.back().traj_loss, 6).c_str());
}

namespace {

GoalSpec resolve_goal(const RunConfig& cfg, const Scene& scene,
                      const std::optional<GoalSpec>& goal_override) {
  GoalSpec goal = goal_override ? *goal_override : cfg.world.goals.front();
  bool found = false;
  for (const auto& obj : scene.objects) found = found || obj.name == goal.object;
  if (!found)
    throw ConfigError("goal object '" + goal.object + "' not in scene");
  if (goal.fraction <= 0.0 || goal.fraction > 1.0)
    throw ConfigError("goal threshold must lie in (0, 1]");
  return goal;
}

int goal_index_of(const std::vector<GoalSpec>& goals, const GoalSpec& goal) {
  for (size_t i = 0; i < goals.size(); ++i)
    if (goals[i].object == goal.object) return static_cast<int>(i);
  return -1;
}

void write_stats(const fs::path& path,
                 const std::vector<std::tuple<int, std::string, double>>& rows) {
  CsvTable table;
  table.header = {"iteration", "metric", "value"};
  for (const auto& [it, metric, value] : rows)
    table.rows.push_back({std::to_string(it), metric, format_double(value, 9)});
  write_csv(path, table);
}

void write_outcomes(const fs::path& path,
                    const std::vector<RolloutRecord>& rollouts,
                    const GoalSpec& goal, const Scene& reset_scene) {
  CsvTable table;
  table.header = {"rollout", "outcome"};
  for (const RolloutRecord& r : rollouts) {
    const Outcome o = classify_outcome(r, goal, reset_scene);
    const char* name = o == Outcome::Success        ? "success"
                       : o == Outcome::PartialSuccess ? "partial"
                                                      : "failure";
    table.rows.push_back({std::to_string(r.id), name});
  }
  write_csv(path, table);
}

}  // namespace

void cmd_paradigm(const RunConfig& cfg, const std::string& mode,
                  const std::optional<GoalSpec>& goal_override) {
  if (mode != "imitate" && mode != "explore" && mode != "goal" && mode != "dqn")
    throw ConfigError("unknown paradigm mode: " + mode);
  const fs::path out = cfg.out_dir;
  ensure_dir(out);

  Rng scene_rng(cfg.seed);
  TaskEnv env;
  env.scene = make_scene(cfg.world, scene_rng);
  env.goals = cfg.world.goals;
  env.grasp_radius_px = cfg.world.grasp_radius_px;

  const GoalSpec goal = resolve_goal(cfg, env.scene, goal_override);
  const Image goal_img = env.goal_image(goal);
  const FeatureEmbedding psi = FeatureEmbedding::pixel();
  EnvChangeModel ec;
  ec.psi = psi;

  const ModelParams model = load_checkpoint(out / "checkpoint.bin");
  Rng rng(cfg.seed ^ fnv1a("paradigm-" + mode));

  std::vector<std::tuple<int, std::string, double>> stats;

  if (mode == "imitate") {
    const auto aff_data =
        collect(env, PolicySource::from_model(model, cfg.paradigm.n_queries),
                cfg.imitation_rollouts, 1.0, rng);
    const auto rnd_data =
        collect(env, PolicySource::random(), cfg.imitation_rollouts, 1.0, rng);
    const double r_aff =
        knn_execute(aff_data, goal_img, goal, cfg.knn_k, env, psi, rng);
    const double r_rnd =
        knn_execute(rnd_data, goal_img, goal, cfg.knn_k, env, psi, rng);

    const auto ranked = rank_by_goal(aff_data, goal_img, psi);
    if (static_cast<int>(ranked.size()) < cfg.bc_top_k)
      throw InsufficientData("imitate: fewer rollouts than bc_top_k");
    const std::vector<RolloutRecord> top(ranked.begin(),
                                         ranked.begin() + cfg.bc_top_k);
    BcConfig bcc = cfg.bc;
    bcc.seed = cfg.seed;
    const BcPolicy policy = bc_train(top, psi, bcc);
    const double r_bc = bc_execute(policy, env, goal, 20, rng);

    stats.emplace_back(0, "knn_affordance", r_aff);
    stats.emplace_back(0, "knn_random", r_rnd);
    stats.emplace_back(0, "bc", r_bc);
    save_rollouts(out / "rollouts_imitate", aff_data);
    write_outcomes(out / "outcomes_imitate.csv", aff_data, goal, env.scene);
  } else if (mode == "explore" || mode == "goal") {
    const ParadigmMode pm =
        mode == "explore" ? ParadigmMode::Explore : ParadigmMode::Goal;
    const ParadigmResult res = run_paradigm_loop(
        env, &model, pm,
        pm == ParadigmMode::Goal ? std::optional<GoalSpec>(goal) : std::nullopt,
        cfg.paradigm, psi, ec, rng);
    const std::string metric = mode == "explore" ? "coincidental_success_rate"
                                                 : "goal_success_rate";
    for (const IterationStats& s : res.stats)
      stats.emplace_back(s.iteration, metric, s.success_rate);
    save_rollouts(out / ("rollouts_" + mode), res.dataset);
    write_outcomes(out / ("outcomes_" + mode + ".csv"), res.dataset, goal,
                   env.scene);
    if (mode == "goal") {
      const int gi = goal_index_of(env.goals, goal);
      CsvTable curves;
      curves.header = {"rollout", "step", "distance"};
      for (const RolloutRecord& r : res.dataset) {
        if (gi < 0 || !r.success[gi]) continue;
        const auto curve = feature_distance_curve(r, goal_img, psi);
        for (size_t s = 0; s < curve.size(); ++s)
          curves.rows.push_back({std::to_string(r.id), std::to_string(s),
                                 format_double(curve[s], 9)});
      }
      write_csv(out / "curves_goal.csv", curves);
    }
  } else {  // dqn
    const Image scene_img = env.observe();
    const DiscreteActionMap actions =
        build_action_space(model, scene_img, cfg.action_q, cfg.action_nc,
                           cfg.action_ntau, cfg.seed ^ 0xac710235ULL);
    DqnConfig dc = cfg.dqn;
    dc.seed = cfg.seed;
    const DqnResult res = dqn_train(env, actions, goal_img, goal, psi, dc);
    for (size_t t = 0; t < res.success_curve.size(); ++t)
      stats.emplace_back(static_cast<int>(t), "rolling_success",
                         res.success_curve[t]);
    for (size_t a = 0; a < res.action_counts.size(); ++a)
      stats.emplace_back(static_cast<int>(a), "action_count",
                         res.action_counts[a]);

    const std::vector<double> state = psi.embed(env.observe());
    const int a_star = res.qnet.greedy(state);
    auto [c, tau] = actions.action(a_star);
    // roll bucket of the handle nearest the chosen contact, as in training
    int rot = 0;
    double best_d = std::numeric_limits<double>::max();
    for (const auto& obj : env.scene.objects) {
      const double d = dist(env.camera.world_to_image(obj.handle_world()), c);
      if (d < best_d) { best_d = d; rot = obj.rotation_class; }
    }
    RolloutResult greedy =
        execute_affordance(env.scene, env.camera, c, tau, rot, env.goals,
                           env.grasp_radius_px, rng);
    const bool ok = goal_predicate(greedy.scene_after, goal);
    stats.emplace_back(dc.steps, "greedy_success", ok ? 1.0 : 0.0);
    greedy.record.id = 0;
    write_outcomes(out / "outcomes_dqn.csv", {greedy.record}, goal, env.scene);
  }

  const fs::path stats_path = out / ("stats_" + mode + ".csv");
  write_stats(stats_path, stats);
  std::printf("mode=%s stats=%s\n", mode.c_str(),
              stats_path.string().c_str());
}

void cmd_report(const RunConfig& cfg) {
  write_report(cfg.out_dir);
  std::printf("report=%s\n",
              (fs::path(cfg.out_dir) / "report").string().c_str());
}

}  // namespace aff
