#pragma once

#include "kdvr/cloudops.hpp"

namespace kdvr {

struct TrainConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  int batch_rays = 1024;
  int max_epochs = 30;
  int warmup_epochs = 3;   // point-set rounds never run before this many epochs
  bool pg_enabled = true;
  int pg_last_epoch = 12;  // rounds run in epochs (warmup, pg_last]
  int patience = 5;
  double plateau_rel = 1e-3;       // relative eval improvement that resets patience
  double divergence_factor = 10.0; // vs first-epoch loss, two epochs in a row aborts
  double lambda_orient = 1e-2;
  double gamma_floor = 1e-4;
  bool train_ist = false;
  uint64_t seed = 1;
  int workers = 1;
  int eval_rays = 4096;  // test-ray subsample for plateau tracking
  bool verbose = false;
  CloudOpsConfig cloud_ops;
};

// Batch gradient buffer. Slots are lazily zeroed through the touched list so
// clearing between batches costs O(touched), not O(points).
struct GradAccumulator {
  size_t n = 0;
  bool with_ist = false;
  std::vector<double> d_params;     // kParamChannels per point
  std::vector<double> d_log_gamma;  // 1 per point
  std::vector<double> d_ist;        // 9 per point when with_ist
  std::vector<uint32_t> touched;
  std::vector<uint8_t> stamp;

  void init(size_t n_points, bool ist);
  void clear();
  void touch(uint32_t j);
  void merge_from(const GradAccumulator& other);
};

struct BackwardConfig {
  double lambda_orient = 1e-2;
  bool train_ist = false;
};

double pixel_loss(const Vec3& pred, const Vec3& gt);

// Forward + analytic reverse sweep for one supervised ray. Returns the ray
// loss (pixel + weighted orientation) and accumulates d(loss)/d(raw params),
// d(loss)/d(log gamma), and, when cfg.train_ist, d(loss)/d(frame entries).
// Segment normals are constants to the gradient; `freeze` exists so finite
// difference probes can pin them (and optionally the frames) to match.
double backward_ray(const SceneModel& model, const Ray& ray, const Vec3& gt,
                    const RenderOptions& opts, const BackwardConfig& cfg,
                    GradAccumulator& acc, RayTape& tape,
                    const ShadingFreeze* freeze = nullptr);

// One dense Adam update from accumulated gradients. Confidences are stepped
// in log space and clamped to cfg.gamma_floor; redirection frames are
// re-orthonormalized after their step.
void adam_step(SceneModel& model, const GradAccumulator& acc, const TrainConfig& cfg);

struct EpochStats {
  double train_loss = 0;
  double eval_loss = -1;  // < 0: no test rays
  size_t points = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  bool early_stopped = false;
};

// Epoch loop: optional point-set round, seeded epoch shuffle, minibatch
// Adam, eval-subset plateau tracking, divergence abort. Resumes from
// model.train_state and leaves it ready for the next call.
TrainReport train(SceneModel& model, const Dataset& dataset, const TrainConfig& cfg);

}  // namespace kdvr
