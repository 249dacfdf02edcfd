#include "kdvr/synth.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace kdvr {

namespace {

constexpr double kMinHitT = 1e-9;

using nlohmann::json;

}  // namespace

// ---------------------------------------------------------------------------
// Cameras

std::vector<SynthView> ring_views(const Vec3& target, double radius, double height, int count,
                                  int width, int height_px, double fov_deg, double phase,
                                  int test_every) {
  if (count < 1) throw SizeError("ring_views: count must be >= 1");
  if (width < 1 || height_px < 1) throw SizeError("ring_views: empty image");
  double f_pix = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
  std::vector<SynthView> views;
  views.reserve(count);
  for (int k = 0; k < count; ++k) {
    double theta = phase + 2.0 * M_PI * k / count;
    Vec3 pos = target + Vec3{radius * std::cos(theta), height, radius * std::sin(theta)};
    Vec3 f = normalized(target - pos);
    Vec3 r0 = cross(Vec3{0, -1, 0}, f);
    if (norm(r0) < 1e-12) r0 = cross(Vec3{0, 0, -1}, f);
    Vec3 r = normalized(r0);
    Vec3 d = cross(f, r);  // det(+1) by construction; image-down tracks world -y

    SynthView v;
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d", k);
    v.name = name;
    v.camera.width = width;
    v.camera.height = height_px;
    v.camera.fx = v.camera.fy = f_pix;
    v.camera.cx = 0.5 * width;
    v.camera.cy = 0.5 * height_px;
    v.camera.rot = Mat3::from_cols(r, d, f);
    v.camera.pos = pos;
    v.is_test = test_every > 0 && k % test_every == test_every - 1;
    views.push_back(std::move(v));
  }
  return views;
}

Camera rotated_camera(const Camera& cam, const Mat3& rot) {
  Camera c = cam;
  c.rot = rot * cam.rot;
  c.pos = rot * cam.pos;
  return c;
}

Mat3 rot180(int axis) {
  if (axis < 0 || axis > 2) throw RangeError("rot180: axis must be 0, 1, or 2");
  Mat3 r = Mat3::identity();
  for (int a = 0; a < 3; ++a)
    if (a != axis) r(a, a) = -1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Analytic tracing

namespace {

bool clips_keep(const SynthPrimitive& prim, const Vec3& p_local) {
  for (const SynthClip& c : prim.clips)
    if (dot(c.normal, p_local) > c.offset) return false;
  return true;
}

// Smallest accepted t on one primitive, or nullopt. Candidates behind nearer
// clipped-away patches are considered (rays pass through holes).
std::optional<OracleHit> trace_primitive(const SynthPrimitive& prim, const Ray& ray) {
  const Mat3 r_t = prim.pose.rot.transposed();
  const Vec3 o = r_t * (ray.origin - prim.pose.trans);
  const Vec3 d = r_t * ray.direction;

  double cand_t[2];
  Vec3 cand_n[2];  // local outward normals
  int n_cand = 0;

  if (prim.kind == SynthPrimitive::Kind::kSphere) {
    double b = dot(o, d);
    double c = dot(o, o) - prim.radius * prim.radius;
    double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    double sq = std::sqrt(disc);
    for (double t : {-b - sq, -b + sq}) {
      cand_t[n_cand] = t;
      cand_n[n_cand] = (o + d * t) / prim.radius;
      ++n_cand;
    }
  } else {
    const Vec3& h = prim.half_extent;
    double t_lo = -std::numeric_limits<double>::infinity();
    double t_hi = std::numeric_limits<double>::infinity();
    int ax_lo = -1, ax_hi = -1;
    for (int a = 0; a < 3; ++a) {
      if (d[a] == 0.0) {
        if (o[a] < -h[a] || o[a] > h[a]) return std::nullopt;
        continue;
      }
      double inv = 1.0 / d[a];
      double ta = (-h[a] - o[a]) * inv;
      double tb = (h[a] - o[a]) * inv;
      double tn = std::min(ta, tb), tf = std::max(ta, tb);
      if (tn > t_lo) {
        t_lo = tn;
        ax_lo = a;
      }
      if (tf < t_hi) {
        t_hi = tf;
        ax_hi = a;
      }
    }
    if (t_lo > t_hi) return std::nullopt;
    if (ax_lo >= 0) {
      Vec3 n{0, 0, 0};
      n[ax_lo] = d[ax_lo] > 0.0 ? -1.0 : 1.0;  // entering face
      cand_t[n_cand] = t_lo;
      cand_n[n_cand] = n;
      ++n_cand;
    }
    if (ax_hi >= 0) {
      Vec3 n{0, 0, 0};
      n[ax_hi] = d[ax_hi] > 0.0 ? 1.0 : -1.0;  // exiting face
      cand_t[n_cand] = t_hi;
      cand_n[n_cand] = n;
      ++n_cand;
    }
  }

  for (int i = 0; i < n_cand; ++i) {
    double t = cand_t[i];
    if (t <= kMinHitT) continue;
    if (!clips_keep(prim, o + d * t)) continue;
    OracleHit hit;
    hit.t = t;
    hit.point = ray.origin + ray.direction * t;
    hit.normal = normalized(prim.pose.rot * cand_n[i]);
    return hit;
  }
  return std::nullopt;
}

}  // namespace

std::optional<OracleHit> oracle_trace(const SynthSceneSpec& spec, const Ray& ray) {
  std::optional<OracleHit> best;
  for (size_t i = 0; i < spec.primitives.size(); ++i) {
    std::optional<OracleHit> h = trace_primitive(spec.primitives[i], ray);
    if (!h) continue;
    if (!best || h->t < best->t) {
      h->prim = static_cast<int>(i);
      h->part = spec.primitives[i].part;
      best = h;
    }
  }
  return best;
}

Vec3 oracle_pixel(const SynthSceneSpec& spec, const Ray& ray) {
  std::optional<OracleHit> hit = oracle_trace(spec, ray);
  if (!hit) return spec.background;
  const SynthMaterial& m = spec.primitives[hit->prim].material;
  ActivatedAppearance app;
  app.diffuse = m.diffuse;
  app.specular = m.specular;
  app.tint = m.tint;
  app.shininess = std::min(128.0, std::max(1.0, m.shininess));
  return phong_color(app, hit->normal, -ray.direction, spec.lighting);
}

Image oracle_render(const SynthSceneSpec& spec, const Camera& cam) {
  Image img(cam.width, cam.height);
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      Vec3 c = oracle_pixel(spec, camera_ray(cam, px, py));
      img.at(px, py, 0) = c.x;
      img.at(px, py, 1) = c.y;
      img.at(px, py, 2) = c.z;
    }
  return img;
}

std::vector<int> oracle_part_ids(const SynthSceneSpec& spec, const Camera& cam) {
  std::vector<int> ids(static_cast<size_t>(cam.width) * cam.height, -1);
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      std::optional<OracleHit> hit = oracle_trace(spec, camera_ray(cam, px, py));
      if (hit) ids[static_cast<size_t>(py) * cam.width + px] = hit->part;
    }
  return ids;
}

Dataset oracle_dataset(const SynthSceneSpec& spec) {
  Dataset ds;
  for (const SynthView& sv : spec.views) {
    View v;
    v.name = sv.name;
    v.camera = sv.camera;
    v.is_test = sv.is_test;
    v.image = oracle_render(spec, sv.camera);
    ds.views.push_back(std::move(v));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Surface sampling

namespace {

double raw_logit(double p) {
  double c = std::min(1.0 - 1e-4, std::max(1e-4, p));
  return std::log(c / (1.0 - c));
}

double primitive_area(const SynthPrimitive& p) {
  if (p.kind == SynthPrimitive::Kind::kSphere) return 4.0 * M_PI * p.radius * p.radius;
  const Vec3& h = p.half_extent;
  return 8.0 * (h.x * h.y + h.y * h.z + h.z * h.x);
}

// Uniform point + outward normal on the local surface.
void sample_local(const SynthPrimitive& prim, Rng& rng, Vec3& p, Vec3& n) {
  if (prim.kind == SynthPrimitive::Kind::kSphere) {
    double z = rng.uniform(-1.0, 1.0);
    double phi = rng.uniform(0.0, 2.0 * M_PI);
    double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    n = {rho * std::cos(phi), rho * std::sin(phi), z};
    p = n * prim.radius;
    return;
  }
  const Vec3& h = prim.half_extent;
  double fa[3] = {4.0 * h.y * h.z, 4.0 * h.z * h.x, 4.0 * h.x * h.y};
  double u = rng.uniform(0.0, 2.0 * (fa[0] + fa[1] + fa[2]));
  int axis = 0;
  for (; axis < 2; ++axis) {
    if (u < 2.0 * fa[axis]) break;
    u -= 2.0 * fa[axis];
  }
  double sign = u < fa[axis] ? -1.0 : 1.0;
  int b = (axis + 1) % 3, c = (axis + 2) % 3;
  p = Vec3{0, 0, 0};
  p[axis] = sign * h[axis];
  p[b] = rng.uniform(-h[b], h[b]);
  p[c] = rng.uniform(-h[c], h[c]);
  n = Vec3{0, 0, 0};
  n[axis] = sign;
}

}  // namespace

ParamVector material_params(const SynthMaterial& m) {
  ParamVector e{};
  e[kChDensity] = m.density_logit;
  for (int c = 0; c < 3; ++c) {
    e[kChDiffuse + c] = raw_logit(m.diffuse[c]);
    e[kChSpecular + c] = raw_logit(m.specular[c]);
    e[kChTint + c] = raw_logit(m.tint[c]);
  }
  e[kChRoughness] = std::log(std::min(128.0, std::max(1.0, m.shininess)));
  return e;
}

SampledCloud sample_surface(const SynthSceneSpec& spec) {
  if (spec.samples > (size_t{1} << 21))
    throw CapacityError("sample_surface: " + std::to_string(spec.samples) +
                        " samples exceed the 2^21 tree capacity");
  if (spec.primitives.empty()) throw SizeError("sample_surface: no primitives");
  std::vector<double> prefix(spec.primitives.size());
  double total = 0.0;
  for (size_t i = 0; i < spec.primitives.size(); ++i) {
    total += primitive_area(spec.primitives[i]);
    prefix[i] = total;
  }
  if (!(total > 0.0)) throw ContractError("sample_surface: zero surface area");

  SampledCloud sc;
  sc.cloud.has_normals = true;
  sc.cloud.resize(spec.samples);
  sc.part.resize(spec.samples);
  Rng rng(Rng::mix(spec.seed, 0x73796e7468ULL));

  for (size_t k = 0; k < spec.samples; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 100000)
        throw ContractError("sample_surface: rejection sampling failed (surface fully clipped?)");
      double u = rng.uniform(0.0, total);
      size_t pi = 0;
      while (pi + 1 < prefix.size() && u >= prefix[pi]) ++pi;
      const SynthPrimitive& prim = spec.primitives[pi];
      Vec3 p_l, n_l;
      sample_local(prim, rng, p_l, n_l);
      if (!clips_keep(prim, p_l)) continue;
      Vec3 p = prim.pose.apply(p_l);
      p += Vec3{rng.normal(), rng.normal(), rng.normal()} * spec.noise;
      sc.cloud.positions[k] = p;
      sc.cloud.normals[k] = normalized(prim.pose.rot * n_l);
      sc.cloud.params[k] = material_params(prim.material);
      sc.part[k] = prim.part;
      break;
    }
  }
  sc.cloud.validate();
  return sc;
}

// ---------------------------------------------------------------------------
// Deformation programs

ShapeEdit deform_edit(const SampledCloud& sc, const DeformProgram& d) {
  const size_t n = sc.cloud.size();
  if (sc.part.size() != n) throw ContractError("deform_edit: part ids out of step");
  ShapeEdit edit;
  edit.targets.resize(n);
  switch (d.kind) {
    case DeformProgram::Kind::kNone:
      for (size_t i = 0; i < n; ++i) edit.targets[i].q = sc.cloud.positions[i];
      break;
    case DeformProgram::Kind::kRigid:
      for (size_t i = 0; i < n; ++i) edit.targets[i].q = d.rigid.apply(sc.cloud.positions[i]);
      break;
    case DeformProgram::Kind::kArticulation: {
      Mat3 r = Mat3::axis_angle(d.axis, d.angle);
      for (size_t i = 0; i < n; ++i) {
        const Vec3& p = sc.cloud.positions[i];
        edit.targets[i].q = sc.part[i] == d.part ? d.pivot + r * (p - d.pivot) : p;
      }
      break;
    }
    case DeformProgram::Kind::kCut:
      for (size_t i = 0; i < n; ++i) {
        const Vec3& p = sc.cloud.positions[i];
        if (dot(d.cut_normal, p) > d.cut_offset)
          edit.targets[i].deleted = true;
        else
          edit.targets[i].q = p;
      }
      break;
  }
  return edit;
}

SynthSceneSpec deform_spec(const SynthSceneSpec& spec) {
  SynthSceneSpec out = spec;
  const DeformProgram& d = spec.deform;
  switch (d.kind) {
    case DeformProgram::Kind::kNone:
      break;
    case DeformProgram::Kind::kRigid:
      for (SynthPrimitive& p : out.primitives) p.pose = p.pose.then(d.rigid);
      out.lighting = spec.lighting.rotated(d.rigid.rot);
      out.orient_ref = d.rigid.apply(spec.orient_ref);
      break;
    case DeformProgram::Kind::kArticulation: {
      Mat3 r = Mat3::axis_angle(d.axis, d.angle);
      RigidTransform a{r, d.pivot - r * d.pivot};
      for (SynthPrimitive& p : out.primitives)
        if (p.part == d.part) p.pose = p.pose.then(a);
      break;
    }
    case DeformProgram::Kind::kCut:
      for (SynthPrimitive& p : out.primitives) {
        SynthClip c;
        c.normal = p.pose.rot.transposed() * d.cut_normal;
        c.offset = d.cut_offset - dot(d.cut_normal, p.pose.trans);
        p.clips.push_back(c);
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Presets

SynthSceneSpec synth_preset(const std::string& name) {
  SynthSceneSpec spec;
  if (name == "sphere") {
    SynthPrimitive s;
    s.kind = SynthPrimitive::Kind::kSphere;
    s.radius = 0.5;
    s.pose.trans = {0.0, 0.02, 0.0};
    s.material.diffuse = {0.46, 0.26, 0.20};
    s.material.specular = {0.20, 0.20, 0.20};
    s.material.shininess = 20.0;
    spec.primitives.push_back(s);

    spec.lighting.ambient = {0.45, 0.45, 0.45};
    spec.lighting.directional.push_back(
        {normalized(Vec3{0.35, 0.80, -0.40}), {0.50, 0.50, 0.47}});
    spec.orient_ref = {0.0, 1.10, 0.0};
    spec.views = ring_views({0, 0, 0}, 2.6, 1.10, 40, 128, 128, 45.0, 0.12, 5);
    spec.samples = 6144;
    spec.noise = 0.004;
    spec.seed = 7;
    return spec;
  }
  if (name == "sphere_box") {
    SynthPrimitive s;
    s.kind = SynthPrimitive::Kind::kSphere;
    s.radius = 0.45;
    s.pose.trans = {-0.55, 0.00, 0.05};
    s.part = 0;
    s.material.diffuse = {0.50, 0.22, 0.18};
    s.material.specular = {0.22, 0.22, 0.22};
    s.material.shininess = 24.0;
    spec.primitives.push_back(s);

    SynthPrimitive b;
    b.kind = SynthPrimitive::Kind::kBox;
    b.half_extent = {0.40, 0.35, 0.40};
    b.pose.trans = {0.50, -0.05, 0.00};
    b.part = 1;
    b.material.diffuse = {0.16, 0.32, 0.50};
    b.material.specular = {0.18, 0.18, 0.18};
    b.material.tint = {0.85, 0.85, 0.85};
    b.material.shininess = 12.0;
    spec.primitives.push_back(b);

    // Lid floats 0.005 above the box so the two top faces never coincide.
    SynthPrimitive lid;
    lid.kind = SynthPrimitive::Kind::kBox;
    lid.half_extent = {0.42, 0.05, 0.42};
    lid.pose.trans = {0.50, 0.355, 0.00};
    lid.part = 2;
    lid.material.diffuse = {0.50, 0.42, 0.18};
    lid.material.specular = {0.25, 0.25, 0.25};
    lid.material.shininess = 32.0;
    spec.primitives.push_back(lid);

    spec.lighting.ambient = {0.42, 0.42, 0.42};
    spec.lighting.directional.push_back(
        {normalized(Vec3{0.40, 0.80, -0.45}), {0.50, 0.50, 0.46}});
    spec.lighting.directional.push_back(
        {normalized(Vec3{-0.55, 0.35, 0.60}), {0.16, 0.16, 0.20}});
    spec.orient_ref = {0.0, 1.15, 0.0};
    spec.views = ring_views({0, 0, 0}, 2.7, 1.15, 40, 128, 128, 45.0, 0.12, 5);
    spec.samples = 12288;
    spec.noise = 0.004;
    spec.seed = 7;
    return spec;
  }
  throw RangeError("unknown synth preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON spec files

namespace {

Vec3 jvec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3j(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Mat3 jmat3(const json& j) {
  if (!j.is_array() || j.size() != 9) throw ParseError("expected a 9-element row-major array");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m.m[i] = j[i].get<double>();
  return m;
}

Camera jcamera(const json& j) {
  Camera c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.rot = jmat3(j.at("rot"));
  c.pos = jvec3(j.at("pos"));
  return c;
}

json cameraj(const Camera& c) {
  json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["rot"] = c.rot.m;
  j["pos"] = vec3j(c.pos);
  return j;
}

DeformProgram jdeform(const json& j) {
  DeformProgram d;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "none") {
    d.kind = DeformProgram::Kind::kNone;
  } else if (kind == "rigid") {
    d.kind = DeformProgram::Kind::kRigid;
    if (j.contains("rot180")) {
      std::string ax = j["rot180"].get<std::string>();
      if (ax != "x" && ax != "y" && ax != "z")
        throw ParseError("rot180 must be 'x', 'y', or 'z'");
      d.rigid.rot = rot180(ax[0] - 'x');
    } else if (j.contains("rot")) {
      d.rigid.rot = jmat3(j["rot"]);
    } else {
      d.rigid.rot =
          Mat3::axis_angle(jvec3(j.at("axis")), j.at("angle_deg").get<double>() * M_PI / 180.0);
    }
    if (j.contains("translation")) d.rigid.trans = jvec3(j["translation"]);
  } else if (kind == "articulation") {
    d.kind = DeformProgram::Kind::kArticulation;
    d.part = j.at("part").get<int>();
    d.pivot = jvec3(j.at("pivot"));
    d.axis = jvec3(j.at("axis"));
    d.angle = j.at("angle_deg").get<double>() * M_PI / 180.0;
  } else if (kind == "cut") {
    d.kind = DeformProgram::Kind::kCut;
    d.cut_normal = jvec3(j.at("normal"));
    d.cut_offset = j.at("offset").get<double>();
  } else {
    throw ParseError("unknown deform kind '" + kind + "'");
  }
  return d;
}

json deformj(const DeformProgram& d) {
  json j;
  switch (d.kind) {
    case DeformProgram::Kind::kNone:
      j["kind"] = "none";
      break;
    case DeformProgram::Kind::kRigid:
      j["kind"] = "rigid";
      j["rot"] = d.rigid.rot.m;
      j["translation"] = vec3j(d.rigid.trans);
      break;
    case DeformProgram::Kind::kArticulation:
      j["kind"] = "articulation";
      j["part"] = d.part;
      j["pivot"] = vec3j(d.pivot);
      j["axis"] = vec3j(d.axis);
      j["angle_deg"] = d.angle * 180.0 / M_PI;
      break;
    case DeformProgram::Kind::kCut:
      j["kind"] = "cut";
      j["normal"] = vec3j(d.cut_normal);
      j["offset"] = d.cut_offset;
      break;
  }
  return j;
}

}  // namespace

SynthSceneSpec read_synth_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();

  SynthSceneSpec spec;
  try {
    json j = json::parse(ss.str());
    for (const json& jp : j.at("primitives")) {
      SynthPrimitive p;
      std::string kind = jp.at("kind").get<std::string>();
      if (kind == "sphere") {
        p.kind = SynthPrimitive::Kind::kSphere;
        p.radius = jp.at("radius").get<double>();
        if (!(p.radius > 0.0)) throw ParseError("sphere radius must be positive");
      } else if (kind == "box") {
        p.kind = SynthPrimitive::Kind::kBox;
        p.half_extent = jvec3(jp.at("half_extent"));
        if (!(p.half_extent.x > 0.0 && p.half_extent.y > 0.0 && p.half_extent.z > 0.0))
          throw ParseError("box half_extent must be positive");
      } else {
        throw ParseError("unknown primitive kind '" + kind + "'");
      }
      p.pose.trans = jvec3(jp.at("center"));
      if (jp.contains("rot")) p.pose.rot = jmat3(jp["rot"]);
      p.part = jp.value("part", 0);
      if (jp.contains("material")) {
        const json& jm = jp["material"];
        SynthMaterial& m = p.material;
        if (jm.contains("diffuse")) m.diffuse = jvec3(jm["diffuse"]);
        if (jm.contains("specular")) m.specular = jvec3(jm["specular"]);
        if (jm.contains("tint")) m.tint = jvec3(jm["tint"]);
        m.shininess = jm.value("shininess", m.shininess);
        m.density_logit = jm.value("density_logit", m.density_logit);
      }
      for (const json& jc : jp.value("clips", json::array())) {
        SynthClip c;
        c.normal = jvec3(jc.at("normal"));
        c.offset = jc.at("offset").get<double>();
        p.clips.push_back(c);
      }
      spec.primitives.push_back(std::move(p));
    }

    const json& jl = j.at("lighting");
    spec.lighting.ambient = jvec3(jl.at("ambient"));
    for (const json& jd : jl.value("directional", json::array()))
      spec.lighting.directional.push_back({normalized(jvec3(jd.at("direction"))),
                                           jvec3(jd.at("color"))});
    spec.background = jvec3(j.at("background"));
    spec.orient_ref = jvec3(j.at("orient_ref"));

    if (j.contains("ring")) {
      const json& jr = j["ring"];
      Vec3 target = jr.contains("target") ? jvec3(jr["target"]) : Vec3{0, 0, 0};
      spec.views = ring_views(target, jr.at("radius").get<double>(),
                              jr.at("height").get<double>(), jr.at("count").get<int>(),
                              jr.at("width").get<int>(), jr.at("image_height").get<int>(),
                              jr.at("fov_deg").get<double>(), jr.value("phase", 0.0),
                              jr.value("test_every", 0));
    } else {
      for (const json& jv : j.at("views")) {
        SynthView v;
        v.name = jv.at("name").get<std::string>();
        v.camera = jcamera(jv.at("camera"));
        v.is_test = jv.value("test", false);
        spec.views.push_back(std::move(v));
      }
    }

    spec.samples = j.value("samples", spec.samples);
    spec.noise = j.value("noise", spec.noise);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("deform")) spec.deform = jdeform(j["deform"]);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
  return spec;
}

void write_synth_spec(const SynthSceneSpec& spec, const std::string& path) {
  json j;
  json prims = json::array();
  for (const SynthPrimitive& p : spec.primitives) {
    json jp;
    if (p.kind == SynthPrimitive::Kind::kSphere) {
      jp["kind"] = "sphere";
      jp["radius"] = p.radius;
    } else {
      jp["kind"] = "box";
      jp["half_extent"] = vec3j(p.half_extent);
    }
    jp["center"] = vec3j(p.pose.trans);
    if (!(p.pose.rot == Mat3::identity())) jp["rot"] = p.pose.rot.m;
    jp["part"] = p.part;
    json jm;
    jm["diffuse"] = vec3j(p.material.diffuse);
    jm["specular"] = vec3j(p.material.specular);
    jm["tint"] = vec3j(p.material.tint);
    jm["shininess"] = p.material.shininess;
    jm["density_logit"] = p.material.density_logit;
    jp["material"] = jm;
    if (!p.clips.empty()) {
      json jcs = json::array();
      for (const SynthClip& c : p.clips) {
        json jc;
        jc["normal"] = vec3j(c.normal);
        jc["offset"] = c.offset;
        jcs.push_back(jc);
      }
      jp["clips"] = jcs;
    }
    prims.push_back(jp);
  }
  j["primitives"] = prims;

  j["lighting"]["ambient"] = vec3j(spec.lighting.ambient);
  json dirs = json::array();
  for (const DirectionalLight& l : spec.lighting.directional) {
    json jd;
    jd["direction"] = vec3j(l.direction);
    jd["color"] = vec3j(l.color);
    dirs.push_back(jd);
  }
  j["lighting"]["directional"] = dirs;
  j["background"] = vec3j(spec.background);
  j["orient_ref"] = vec3j(spec.orient_ref);

  json views = json::array();
  for (const SynthView& v : spec.views) {
    json jv;
    jv["name"] = v.name;
    jv["test"] = v.is_test;
    jv["camera"] = cameraj(v.camera);
    views.push_back(jv);
  }
  j["views"] = views;

  j["samples"] = spec.samples;
  j["noise"] = spec.noise;
  j["seed"] = spec.seed;
  if (spec.deform.kind != DeformProgram::Kind::kNone) j["deform"] = deformj(spec.deform);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace kdvr
