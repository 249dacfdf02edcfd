// kdvren: point-cloud scene pipeline driver.
//
//   synth     analytic scene -> dataset dir (images, cloud, configs)
//   build     cloud + scene config -> checkpoint
//   train     checkpoint + dataset -> trained checkpoint (+ loss log)
//   render    checkpoint + scene config -> images
//   edit      checkpoint + shape edit -> edited checkpoint
//   finetune  edited checkpoint + dataset -> checkpoint (+ loss log)
//   match     two models/clouds -> matching table
//   morph     two checkpoints -> morph frames + matching table
//   eval      two image dirs -> psnr/ssim table
//
// Exit codes: 0 success, 1 pipeline error (one-line diagnostic on stderr),
// 2 usage.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "kdvr/cloudops.hpp"
#include "kdvr/io.hpp"
#include "kdvr/morphing.hpp"
#include "kdvr/renderer.hpp"
#include "kdvr/synth.hpp"

namespace fs = std::filesystem;
using namespace kdvr;

namespace {

Vec3 to_vec3(const std::vector<double>& v) {
  if (v.size() != 3) throw RangeError("expected 3 comma-separated values");
  return {v[0], v[1], v[2]};
}

Vec3 train_camera_centroid(const SceneConfig& cfg) {
  Vec3 c{0, 0, 0};
  size_t n = 0;
  for (const ViewConfig& v : cfg.views)
    if (!v.is_test) {
      c += v.camera.pos;
      ++n;
    }
  if (n == 0) throw SizeError("scene has no training views to orient normals against");
  return c / static_cast<double>(n);
}

IndexedPointCloud load_positions(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") return read_ply(path);
  return load_checkpoint(path).cloud;
}

void write_dataset(const SynthSceneSpec& spec, const fs::path& dir) {
  fs::create_directories(dir / "images");
  SceneConfig cfg;
  cfg.background = spec.background;
  cfg.lighting = spec.lighting;
  cfg.orient_ref = spec.orient_ref;
  cfg.cloud = "cloud.ply";
  for (const SynthView& v : spec.views) {
    Image img = oracle_render(spec, v.camera);
    std::string rel = "images/" + v.name + ".png";
    write_png(img, (dir / rel).string());
    ViewConfig vc;
    vc.name = v.name;
    vc.image = rel;
    vc.is_test = v.is_test;
    vc.camera = v.camera;
    cfg.views.push_back(std::move(vc));
  }
  write_scene_config(cfg, (dir / "scene.json").string());
}

void write_loss_log(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# epoch train_loss eval_loss points\n";
  for (size_t i = 0; i < report.epochs.size(); ++i) {
    const EpochStats& e = report.epochs[i];
    char line[128];
    std::snprintf(line, sizeof(line), "%zu %.12g %.12g %zu\n", i + 1, e.train_loss, e.eval_loss,
                  e.points);
    out << line;
  }
  if (!out) throw IoError("write failed: " + path);
}

int run(int argc, char** argv) {
  CLI::App app{"point-cloud scene renderer and editor"};
  app.require_subcommand(1);
  app.fallthrough();

  uint64_t seed = 1;
  int workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--seed", seed, "global random seed");
  app.add_option("--workers", workers, "worker threads for rendering and training");

  // synth ------------------------------------------------------------------
  auto* c_synth = app.add_subcommand("synth", "generate an analytic dataset");
  std::string synth_preset_name, synth_spec_path, synth_out;
  c_synth->add_option("--preset", synth_preset_name, "built-in scene: sphere | sphere_box");
  c_synth->add_option("--spec", synth_spec_path, "scene spec json");
  c_synth->add_option("--out", synth_out, "output directory")->required();

  // build ------------------------------------------------------------------
  auto* c_build = app.add_subcommand("build", "assemble a checkpoint from a cloud");
  std::string build_cloud, build_scene, build_out;
  double init_density = 40.0;
  int build_normal_k = 16, build_knn = 32, build_max_depth = 21;
  std::vector<double> build_orient;
  bool build_keep_density = false;
  c_build->add_option("--cloud", build_cloud, "input point cloud (ply)")->required();
  c_build->add_option("--scene", build_scene, "scene config json")->required();
  c_build->add_option("--out", build_out, "output checkpoint")->required();
  c_build->add_option("--init-density", init_density, "raw density channel for every point");
  c_build->add_flag("--keep-density", build_keep_density, "keep density channels from the ply");
  c_build->add_option("--normal-k", build_normal_k, "neighborhood size for normals");
  c_build->add_option("--knn", build_knn, "interpolation neighbor count");
  c_build->add_option("--max-depth", build_max_depth, "tree depth cap");
  c_build->add_option("--orient-ref", build_orient, "normal orientation reference x,y,z")
      ->delimiter(',')
      ->expected(3);

  // train / finetune -------------------------------------------------------
  auto* c_train = app.add_subcommand("train", "optimize a checkpoint against a dataset");
  auto* c_finetune = app.add_subcommand("finetune", "optimize an edited checkpoint");
  std::string opt_model, opt_scene, opt_out, opt_config, opt_log;
  int opt_epochs = -1;
  bool opt_verbose = false, opt_no_pg = false;
  for (CLI::App* c : {c_train, c_finetune}) {
    c->add_option("--model", opt_model, "input checkpoint")->required();
    c->add_option("--scene", opt_scene, "scene config json")->required();
    c->add_option("--out", opt_out, "output checkpoint")->required();
    c->add_option("--config", opt_config, "train config json overlay");
    c->add_option("--epochs", opt_epochs, "override max epochs");
    c->add_option("--log", opt_log, "loss log path");
    c->add_flag("--verbose", opt_verbose, "per-epoch progress on stderr");
    c->add_flag("--no-pg", opt_no_pg, "disable pruning-and-growing rounds");
  }

  // render -----------------------------------------------------------------
  auto* c_render = app.add_subcommand("render", "render scene views from a checkpoint");
  std::string render_model, render_scene, render_out, render_split = "test", render_dump;
  bool render_plot = false, render_no_ist = false;
  c_render->add_option("--model", render_model, "checkpoint")->required();
  c_render->add_option("--scene", render_scene, "scene config json")->required();
  c_render->add_option("--out", render_out, "output directory")->required();
  c_render->add_option("--split", render_split, "views to render: test | train | all");
  c_render->add_flag("--plot", render_plot, "naive point plot instead of the full renderer");
  c_render->add_flag("--no-ist", render_no_ist, "ignore stored redirection frames");
  c_render->add_option("--dump-ray", render_dump,
                       "view:px:py -> per-segment 'l r sigma r g b' on stdout");

  // edit -------------------------------------------------------------------
  auto* c_edit = app.add_subcommand("edit", "apply an indexed shape edit");
  std::string edit_model, edit_file, edit_out;
  bool edit_no_ist = false;
  std::vector<double> edit_orient;
  c_edit->add_option("--model", edit_model, "input checkpoint")->required();
  c_edit->add_option("--edit", edit_file, "shape edit file")->required();
  c_edit->add_option("--out", edit_out, "output checkpoint")->required();
  c_edit->add_flag("--no-ist", edit_no_ist, "skip redirection frames");
  c_edit->add_option("--orient-ref", edit_orient, "orientation reference override x,y,z")
      ->delimiter(',')
      ->expected(3);

  // match ------------------------------------------------------------------
  auto* c_match = app.add_subcommand("match", "match two equal-size clouds");
  std::string match_a, match_b, match_out;
  c_match->add_option("--a", match_a, "checkpoint or ply")->required();
  c_match->add_option("--b", match_b, "checkpoint or ply")->required();
  c_match->add_option("--out", match_out, "matching table path")->required();

  // morph ------------------------------------------------------------------
  auto* c_morph = app.add_subcommand("morph", "render a morph between two models");
  std::string morph_a, morph_b, morph_scene, morph_out, morph_match;
  int morph_steps = 16, morph_view = 0;
  c_morph->add_option("--a", morph_a, "checkpoint A")->required();
  c_morph->add_option("--b", morph_b, "checkpoint B")->required();
  c_morph->add_option("--scene", morph_scene, "scene config json (camera source)")->required();
  c_morph->add_option("--out", morph_out, "output directory")->required();
  c_morph->add_option("--steps", morph_steps, "frame count (>= 2)");
  c_morph->add_option("--view", morph_view, "view index for the camera");
  c_morph->add_option("--match", morph_match, "reuse a matching table instead of computing one");

  // eval -------------------------------------------------------------------
  auto* c_eval = app.add_subcommand("eval", "psnr/ssim between two image directories");
  std::string eval_a, eval_b, eval_out;
  c_eval->add_option("--a", eval_a, "rendered image directory")->required();
  c_eval->add_option("--b", eval_b, "reference image directory")->required();
  c_eval->add_option("--out", eval_out, "metric table path")->required();

  CLI11_PARSE(app, argc, argv);

  if (c_synth->parsed()) {
    if (synth_preset_name.empty() == synth_spec_path.empty())
      throw RangeError("synth: give exactly one of --preset and --spec");
    SynthSceneSpec spec = synth_spec_path.empty() ? synth_preset(synth_preset_name)
                                                  : read_synth_spec(synth_spec_path);
    if (app.count("--seed")) spec.seed = seed;
    fs::path dir(synth_out);
    fs::create_directories(dir);
    write_synth_spec(spec, (dir / "spec.json").string());

    SampledCloud sc = sample_surface(spec);
    write_ply(sc.cloud, (dir / "cloud.ply").string());
    write_dataset(spec, dir);

    if (spec.deform.kind != DeformProgram::Kind::kNone) {
      write_shape_edit(deform_edit(sc, spec.deform), (dir / "edit.txt").string());
      SynthSceneSpec def = deform_spec(spec);
      write_dataset(def, dir / "deformed");
      write_synth_spec(def, (dir / "deformed" / "spec.json").string());
    }
    std::cout << "wrote " << spec.views.size() << " views, " << sc.cloud.size() << " points to "
              << dir.string() << "\n";
    return 0;
  }

  if (c_build->parsed()) {
    SceneConfig cfg = read_scene_config(build_scene);
    SceneModel model;
    model.cloud = read_ply(build_cloud);
    if (!build_keep_density)
      for (auto& e : model.cloud.params) e[kChDensity] = init_density;
    model.lighting = cfg.lighting;
    model.render.background = cfg.background;
    model.render.knn = build_knn;
    model.build_opts.max_depth = build_max_depth;
    model.normal_k = build_normal_k;
    if (!build_orient.empty())
      model.orient_ref = to_vec3(build_orient);
    else if (cfg.orient_ref)
      model.orient_ref = *cfg.orient_ref;
    else
      model.orient_ref = train_camera_centroid(cfg);
    model.rebuild_tree();
    model.refresh_normals();
    save_checkpoint(model, build_out);
    std::cout << "built " << model.cloud.size() << " points -> " << build_out << "\n";
    return 0;
  }

  if (c_train->parsed() || c_finetune->parsed()) {
    SceneModel model = load_checkpoint(opt_model);
    SceneConfig cfg = read_scene_config(opt_scene);
    Dataset ds = load_dataset(cfg, opt_scene);
    TrainConfig tc;
    if (!opt_config.empty()) tc = read_train_config(opt_config, tc);
    if (app.count("--seed")) tc.seed = seed;
    if (app.count("--workers")) tc.workers = workers;
    if (opt_epochs >= 0) tc.max_epochs = opt_epochs;
    if (opt_no_pg) tc.pg_enabled = false;
    tc.verbose = opt_verbose;
    model.rebuild_tree();
    if (!model.cloud.has_normals) model.refresh_normals();

    TrainReport report =
        c_finetune->parsed() ? finetune(model, ds, tc) : train(model, ds, tc);
    save_checkpoint(model, opt_out);
    if (!opt_log.empty()) write_loss_log(report, opt_log);
    double last_eval = report.epochs.empty() ? -1.0 : report.epochs.back().eval_loss;
    std::cout << "trained " << report.epochs.size() << " epochs ("
              << (report.early_stopped ? "early stop" : "full") << "), " << model.cloud.size()
              << " points, last eval loss " << last_eval << " -> " << opt_out << "\n";
    return 0;
  }

  if (c_render->parsed()) {
    SceneModel model = load_checkpoint(render_model);
    model.rebuild_tree();
    SceneConfig cfg = read_scene_config(render_scene);
    RenderOptions opts = model.render;
    opts.workers = workers;
    if (render_no_ist) opts.ist_enabled = false;

    if (!render_dump.empty()) {
      size_t c1 = render_dump.find(':'), c2 = render_dump.rfind(':');
      if (c1 == std::string::npos || c2 == c1)
        throw RangeError("--dump-ray wants view:px:py");
      size_t view = std::stoul(render_dump.substr(0, c1));
      int px = std::stoi(render_dump.substr(c1 + 1, c2 - c1 - 1));
      int py = std::stoi(render_dump.substr(c2 + 1));
      if (view >= cfg.views.size()) throw RangeError("--dump-ray view out of range");
      RenderOptions dbg = opts;
      dbg.debug = true;
      RenderResult rr = render_ray(model, camera_ray(cfg.views[view].camera, px, py), dbg);
      for (const SegmentDiag& s : rr.segments) {
        char line[160];
        std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g %.17g\n", s.l, s.r,
                      s.sigma, s.color.x, s.color.y, s.color.z);
        std::cout << line;
      }
      return 0;
    }

    fs::create_directories(render_out);
    size_t written = 0;
    for (const ViewConfig& v : cfg.views) {
      if (render_split == "test" && !v.is_test) continue;
      if (render_split == "train" && v.is_test) continue;
      Image img = render_plot ? plot_points(model, v.camera, opts)
                              : render_image(model, v.camera, opts);
      write_png(img, (fs::path(render_out) / (v.name + ".png")).string());
      ++written;
    }
    std::cout << "rendered " << written << " views -> " << render_out << "\n";
    return 0;
  }

  if (c_edit->parsed()) {
    SceneModel model = load_checkpoint(edit_model);
    model.rebuild_tree();
    ShapeEdit edit = read_shape_edit(edit_file);
    std::optional<Vec3> orient;
    if (!edit_orient.empty()) orient = to_vec3(edit_orient);
    EditResult res = apply_edit(model, edit, !edit_no_ist, orient);
    save_checkpoint(res.model, edit_out);
    size_t degenerate = res.model.ist ? res.model.ist->degenerate.size() : 0;
    std::cout << "edited: " << res.survivors.size() << " survivors, " << edit.deleted_count()
              << " deleted, " << degenerate << " degenerate frames -> " << edit_out << "\n";
    return 0;
  }

  if (c_match->parsed()) {
    IndexedPointCloud a = load_positions(match_a), b = load_positions(match_b);
    std::vector<uint32_t> match = match_clouds(a, b);
    write_matching(match, match_out);
    std::cout << "matched " << match.size() << " pairs -> " << match_out << "\n";
    return 0;
  }

  if (c_morph->parsed()) {
    SceneModel a = load_checkpoint(morph_a);
    SceneModel b = load_checkpoint(morph_b);
    a.rebuild_tree();
    b.rebuild_tree();
    SceneConfig cfg = read_scene_config(morph_scene);
    if (morph_view < 0 || static_cast<size_t>(morph_view) >= cfg.views.size())
      throw RangeError("morph: --view out of range");
    std::vector<uint32_t> match = morph_match.empty() ? match_clouds(a.cloud, b.cloud)
                                                      : read_matching(morph_match);
    fs::create_directories(morph_out);
    write_matching(match, (fs::path(morph_out) / "matching.txt").string());
    std::vector<Image> frames =
        render_morph_sequence(a, b, match, morph_steps, cfg.views[morph_view].camera);
    for (size_t i = 0; i < frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%03zu.png", i);
      write_png(frames[i], (fs::path(morph_out) / name).string());
    }
    std::cout << "morphed " << frames.size() << " frames -> " << morph_out << "\n";
    return 0;
  }

  if (c_eval->parsed()) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(eval_a))
      if (entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("eval: no .png files in " + eval_a);
    std::vector<MetricRow> rows;
    for (const std::string& name : names) {
      Image ia = read_png((fs::path(eval_a) / name).string());
      Image ib = read_png((fs::path(eval_b) / name).string());
      MetricRow row;
      row.name = name.substr(0, name.size() - 4);
      row.psnr = psnr(ia, ib);
      row.ssim = ssim(ia, ib);
      rows.push_back(std::move(row));
    }
    write_metric_table(rows, eval_out);
    double mp = 0, ms = 0;
    for (const MetricRow& r : rows) {
      mp += r.psnr;
      ms += r.ssim;
    }
    std::cout << "mean psnr " << mp / rows.size() << " dB, mean ssim " << ms / rows.size()
              << " over " << rows.size() << " views -> " << eval_out << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
