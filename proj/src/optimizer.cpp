#include "kdvr/optimizer.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "kdvr/parallel.hpp"

namespace kdvr {

void GradAccumulator::init(size_t n_points, bool ist) {
  n = n_points;
  with_ist = ist;
  d_params.assign(n * kParamChannels, 0.0);
  d_log_gamma.assign(n, 0.0);
  d_ist.assign(ist ? 9 * n : 0, 0.0);
  touched.clear();
  stamp.assign(n, 0);
}

void GradAccumulator::clear() {
  for (uint32_t j : touched) {
    std::fill_n(d_params.begin() + static_cast<size_t>(j) * kParamChannels, kParamChannels, 0.0);
    d_log_gamma[j] = 0.0;
    if (with_ist) std::fill_n(d_ist.begin() + static_cast<size_t>(j) * 9, 9, 0.0);
    stamp[j] = 0;
  }
  touched.clear();
}

void GradAccumulator::touch(uint32_t j) {
  // Invariant: untouched slots are zero, so first touch needs no reset.
  if (!stamp[j]) {
    stamp[j] = 1;
    touched.push_back(j);
  }
}

void GradAccumulator::merge_from(const GradAccumulator& other) {
  if (other.n != n || other.with_ist != with_ist)
    throw ContractError("grad accumulator: merge shape mismatch");
  for (uint32_t j : other.touched) {
    touch(j);
    size_t pb = static_cast<size_t>(j) * kParamChannels;
    for (int c = 0; c < kParamChannels; ++c) d_params[pb + c] += other.d_params[pb + c];
    d_log_gamma[j] += other.d_log_gamma[j];
    if (with_ist) {
      size_t ib = static_cast<size_t>(j) * 9;
      for (int c = 0; c < 9; ++c) d_ist[ib + c] += other.d_ist[ib + c];
    }
  }
}

double pixel_loss(const Vec3& pred, const Vec3& gt) { return norm2(pred - gt); }

double backward_ray(const SceneModel& model, const Ray& ray, const Vec3& gt,
                    const RenderOptions& opts, const BackwardConfig& cfg,
                    GradAccumulator& acc, RayTape& tape, const ShadingFreeze* freeze) {
  eval_ray(model, ray, opts, tape, freeze);

  const Vec3 bg = opts.background;
  Vec3 pixel = tape.color + bg * tape.tau_out;
  Vec3 resid = pixel - gt;
  double loss = norm2(resid);
  for (const SegmentRecord& rec : tape.segments)
    loss += cfg.lambda_orient * rec.tau * rec.alpha * rec.orient_hinge * rec.orient_hinge;
  if (tape.segments.empty()) return loss;

  if (acc.n != model.cloud.size())
    throw ContractError("backward_ray: accumulator size mismatch");

  Vec3 g_pix = 2.0 * resid;
  double d_tau_next = dot(g_pix, bg);  // d(loss)/d(tau after last segment)
  const Vec3 v_cam = -ray.direction;

  std::vector<double> dk;  // per-sample neighbor weight gradients
  for (size_t si = tape.segments.size(); si-- > 0;) {
    const SegmentRecord& rec = tape.segments[si];

    // Transmittance chain. tau_{i+1} = tau_i * trans_i, alpha_i = 1 - trans_i,
    // and both the color term and the orientation penalty carry tau_i*alpha_i.
    double hinge_sq = rec.orient_hinge * rec.orient_hinge;
    double dw = dot(g_pix, rec.color) + cfg.lambda_orient * hinge_sq;
    double d_alpha = dw * rec.tau;
    double d_tau = dw * rec.alpha + d_tau_next * rec.trans;
    double d_trans = -d_alpha + d_tau_next * rec.tau;
    double d_sigma = d_trans * (-rec.delta * rec.trans);
    d_tau_next = d_tau;

    Vec3 d_color = (rec.tau * rec.alpha) * g_pix;
    Vec3 d_diffuse, d_specular, d_tint;
    double d_shin = 0.0;
    Vec3 d_view;
    bool want_view = rec.use_ist && cfg.train_ist;
    phong_backward(rec.appearance, rec.normal, rec.view, model.lighting, d_color, d_diffuse,
                   d_specular, d_tint, d_shin, want_view ? &d_view : nullptr);
    ParamVector df = activate_backward(rec.feature, rec.appearance, d_diffuse, d_specular,
                                       d_tint, d_sigma, d_shin);

    Mat3 dM;  // d(loss)/d(pre-orthonormalization frame average)
    bool flow_ist = false;
    if (want_view) {
      Vec3 u = rec.ist * v_cam;
      double nu = norm(u);
      if (nu > 0.0) {
        Vec3 vp = u / nu;
        Vec3 du = (d_view - vp * dot(vp, d_view)) / nu;
        Mat3 d_ortho;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) d_ortho(r, c) = du[r] * v_cam[c];
        dM = orthonormalize_columns_backward(rec.ist_avg, d_ortho);
        flow_ist = true;
      }
    }

    std::vector<double> qw = spline_quadrature_weights(rec.s);
    for (int k = 0; k < rec.s; ++k) {
      const SampleRecord& sr = tape.samples[rec.sample_begin + k];
      const uint32_t* n_idx = tape.nbr_idx.data() + sr.nbr_begin;
      const double* n_w = tape.nbr_w.data() + sr.nbr_begin;
      double wq = qw[k];

      if (sr.exact_hit) {
        uint32_t j = n_idx[0];
        acc.touch(j);
        size_t pb = static_cast<size_t>(j) * kParamChannels;
        for (int c = 0; c < kParamChannels; ++c) acc.d_params[pb + c] += wq * df[c];
        if (flow_ist && acc.with_ist) {
          size_t ib = static_cast<size_t>(j) * 9;
          for (int c = 0; c < 9; ++c) acc.d_ist[ib + c] += wq * dM.m[c];
        }
        continue;  // a collapsed sample has no confidence dependence
      }

      dk.assign(sr.nbr_count, 0.0);
      for (uint32_t a = 0; a < sr.nbr_count; ++a) {
        uint32_t j = n_idx[a];
        acc.touch(j);
        double kj = n_w[a];
        const ParamVector& e = model.cloud.params[j];
        size_t pb = static_cast<size_t>(j) * kParamChannels;
        double e_dot_df = 0.0;
        for (int c = 0; c < kParamChannels; ++c) {
          acc.d_params[pb + c] += wq * kj * df[c];
          e_dot_df += e[c] * df[c];
        }
        dk[a] = wq * e_dot_df;
        if (flow_ist && acc.with_ist) {
          size_t ib = static_cast<size_t>(j) * 9;
          const Mat3& F = model.ist->ist[j];
          for (int c = 0; c < 9; ++c) acc.d_ist[ib + c] += wq * kj * dM.m[c];
          dk[a] += wq * fdot(F, dM);
        }
      }
      // Normalized weights are a softmax in log-confidence space, so the
      // log-gamma gradient is k_j * (dk_j - sum_m k_m dk_m).
      double inner = 0.0;
      for (uint32_t a = 0; a < sr.nbr_count; ++a) inner += n_w[a] * dk[a];
      for (uint32_t a = 0; a < sr.nbr_count; ++a)
        acc.d_log_gamma[n_idx[a]] += n_w[a] * (dk[a] - inner);
    }
  }
  return loss;
}

void adam_step(SceneModel& model, const GradAccumulator& acc, const TrainConfig& cfg) {
  size_t n = model.cloud.size();
  if (acc.n != n) throw ContractError("adam_step: accumulator size mismatch");
  TrainingState& ts = model.train_state;
  if (ts.adam_params.m.size() != n * kParamChannels) ts.adam_params.init(n * kParamChannels);
  if (ts.adam_log_gamma.m.size() != n) ts.adam_log_gamma.init(n);
  bool ist_on = cfg.train_ist && model.ist.has_value() && acc.with_ist;
  if (ist_on && ts.adam_ist.m.size() != 9 * n) ts.adam_ist.init(9 * n);

  ts.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(ts.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(ts.step));
  auto delta = [&](double& m, double& v, double g) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    return cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
  };

  for (size_t j = 0; j < n; ++j) {
    size_t pb = j * kParamChannels;
    for (int c = 0; c < kParamChannels; ++c)
      model.cloud.params[j][c] -=
          delta(ts.adam_params.m[pb + c], ts.adam_params.v[pb + c], acc.d_params[pb + c]);

    double lg = std::log(model.cloud.confidences[j]);
    lg -= delta(ts.adam_log_gamma.m[j], ts.adam_log_gamma.v[j], acc.d_log_gamma[j]);
    model.cloud.confidences[j] = std::max(std::exp(lg), cfg.gamma_floor);

    if (ist_on) {
      size_t ib = j * 9;
      Mat3& F = model.ist->ist[j];
      for (int c = 0; c < 9; ++c)
        F.m[c] -= delta(ts.adam_ist.m[ib + c], ts.adam_ist.v[ib + c], acc.d_ist[ib + c]);
      F = orthonormalize_columns(F);
    }
  }
}

namespace {

Vec3 image_pixel(const Image& img, int px, int py) {
  return {img.at(px, py, 0), img.at(px, py, 1), img.at(px, py, 2)};
}

double mean_eval_loss(const SceneModel& model, const Dataset& ds,
                      const std::vector<RayRef>& rays, const RenderOptions& opts,
                      int workers, std::vector<RayTape>& tapes) {
  std::vector<double> partial(tapes.size(), 0.0);
  parallel_chunks(rays.size(), workers, [&](size_t w, size_t b, size_t e) {
    double s = 0.0;
    for (size_t i = b; i < e; ++i) {
      const RayRef& rr = rays[i];
      const View& view = ds.views[rr.view];
      eval_ray(model, camera_ray(view.camera, rr.px, rr.py), opts, tapes[w]);
      Vec3 pred = tapes[w].color + opts.background * tapes[w].tau_out;
      s += pixel_loss(pred, image_pixel(view.image, rr.px, rr.py));
    }
    partial[w] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total / static_cast<double>(rays.size());
}

}  // namespace

TrainReport train(SceneModel& model, const Dataset& dataset, const TrainConfig& cfg) {
  model.cloud.validate();
  if (!model.tree) model.rebuild_tree();
  if (!model.cloud.has_normals) model.refresh_normals();

  RenderOptions opts = model.render;
  opts.debug = false;

  std::vector<RayRef> train_rays = enumerate_rays(dataset, false);
  if (train_rays.empty()) throw ContractError("train: no supervised rays");
  std::vector<RayRef> eval_rays = enumerate_rays(dataset, true);
  {
    // Fixed eval subset for the whole run, independent of epoch order.
    Rng r(Rng::mix(cfg.seed, 0x6c617665ULL));
    r.shuffle(eval_rays);
    if (eval_rays.size() > static_cast<size_t>(cfg.eval_rays))
      eval_rays.resize(static_cast<size_t>(cfg.eval_rays));
  }

  BackwardConfig bcfg{cfg.lambda_orient, cfg.train_ist && model.ist.has_value()};
  int workers = std::max(1, cfg.workers);
  std::vector<GradAccumulator> accs(workers);
  std::vector<RayTape> tapes(workers);

  TrainReport report;
  TrainingState& ts = model.train_state;

  for (uint32_t epoch = ts.epoch + 1; epoch <= static_cast<uint32_t>(cfg.max_epochs);
       ++epoch) {
    if (cfg.pg_enabled && static_cast<int>(epoch) > cfg.warmup_epochs &&
        static_cast<int>(epoch) <= cfg.pg_last_epoch)
      optimization_round(model, dataset, cfg.cloud_ops);

    size_t n = model.cloud.size();
    for (auto& a : accs)
      if (a.n != n || a.with_ist != bcfg.train_ist) a.init(n, bcfg.train_ist);

    std::vector<RayRef> order = train_rays;
    Rng shuffle_rng(Rng::mix(cfg.seed, epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    size_t batch = static_cast<size_t>(std::max(1, cfg.batch_rays));
    for (size_t b = 0; b < order.size(); b += batch) {
      size_t e = std::min(order.size(), b + batch);
      for (auto& a : accs) a.clear();
      std::vector<double> partial(static_cast<size_t>(workers), 0.0);
      parallel_chunks(e - b, workers, [&](size_t w, size_t cb, size_t ce) {
        double s = 0.0;
        for (size_t i = cb; i < ce; ++i) {
          const RayRef& rr = order[b + i];
          const View& view = dataset.views[rr.view];
          Ray ray = camera_ray(view.camera, rr.px, rr.py);
          s += backward_ray(model, ray, image_pixel(view.image, rr.px, rr.py), opts, bcfg,
                            accs[w], tapes[w]);
        }
        partial[w] = s;
      });
      for (int w = 1; w < workers; ++w) accs[0].merge_from(accs[w]);
      for (double p : partial) loss_sum += p;
      adam_step(model, accs[0], cfg);
    }
    double train_loss = loss_sum / static_cast<double>(order.size());

    double eval_loss = -1.0;
    if (!eval_rays.empty())
      eval_loss = mean_eval_loss(model, dataset, eval_rays, opts, workers, tapes);

    report.epochs.push_back({train_loss, eval_loss, model.cloud.size()});
    ts.epoch = epoch;
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %u  points %zu  train %.6g  eval %.6g\n", epoch,
                   model.cloud.size(), train_loss, eval_loss);

    if (ts.initial_loss < 0.0) ts.initial_loss = train_loss;
    if (train_loss > cfg.divergence_factor * ts.initial_loss) {
      if (++ts.diverged_epochs >= 2)
        throw DivergenceError("train: loss exceeded " +
                              std::to_string(cfg.divergence_factor) +
                              "x the initial loss for 2 consecutive epochs");
    } else {
      ts.diverged_epochs = 0;
    }

    if (eval_loss >= 0.0) {
      if (ts.best_eval < 0.0 || eval_loss < ts.best_eval * (1.0 - cfg.plateau_rel)) {
        ts.best_eval = eval_loss;
        ts.plateau = 0;
      } else if (++ts.plateau >= static_cast<uint32_t>(cfg.patience)) {
        report.early_stopped = true;
        break;
      }
    }
  }
  return report;
}

}  // namespace kdvr
