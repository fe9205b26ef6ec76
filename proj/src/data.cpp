#include "rtn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "rtn/interp.hpp"
#include "rtn/serialize.hpp"

namespace rtn {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(dir + ": cannot create directory");
}

struct Wave {
  double amp = 0.0;
  double qx = 0.0, qy = 0.0;  // radians per pixel
  double phase = 0.0;

  double eval(double x, double y) const { return amp * std::sin(qx * x + qy * y + phase); }
  double dx(double x, double y) const { return amp * qx * std::cos(qx * x + qy * y + phase); }
  double dy(double x, double y) const { return amp * qy * std::cos(qx * x + qy * y + phase); }
};

Wave draw_wave(Rng& rng, double amp, double min_wavelength, double max_wavelength) {
  Wave w;
  const double angle = rng.uniform(0.0, kTau);
  const double wavelength = rng.uniform(min_wavelength, max_wavelength);
  w.amp = amp;
  w.qx = kTau * std::cos(angle) / wavelength;
  w.qy = kTau * std::sin(angle) / wavelength;
  w.phase = rng.uniform(0.0, kTau);
  return w;
}

struct Blob {
  double cx, cy, inv_two_sigma_sq;
  double amp[3];
};

// Procedural scene in the clean (target) frame. Everything is smooth so
// that resampling the warped copy stays faithful.
struct Scene {
  int size = 0;
  // object ellipse
  double ox = 0.0, oy = 0.0, ra = 1.0, rb = 1.0, cos_b = 1.0, sin_b = 0.0;
  int kind = 0;  // 0 octaves, 1 blobs, 2 checker
  std::vector<Wave> tex[3];
  std::vector<Blob> blobs;
  double checker_qu = 0.0, checker_qv = 0.0, checker_rot = 0.0;
  double checker_phase[3] = {0.0, 0.0, 0.0};
  Wave checker_mod;
  Wave bg_wave[3];
  Wave bg_detail[3];
  double bg_base[3] = {0.0, 0.0, 0.0};
  double bg_slope[3] = {0.0, 0.0, 0.0};

  // Signed distance-like ellipse measure: negative inside.
  double object_dist(double x, double y) const {
    const double dx = x - ox, dy = y - oy;
    const double u = (cos_b * dx + sin_b * dy) / ra;
    const double v = (-sin_b * dx + cos_b * dy) / rb;
    return (std::sqrt(u * u + v * v) - 1.0) * std::min(ra, rb);
  }

  bool inside_object(double x, double y) const { return object_dist(x, y) < 0.0; }

  double texture_channel(double x, double y, int c) const {
    switch (kind) {
      case 1: {
        double v = 0.5;
        for (const Blob& b : blobs) {
          const double dx = x - b.cx, dy = y - b.cy;
          v += b.amp[c] * std::exp(-(dx * dx + dy * dy) * b.inv_two_sigma_sq);
        }
        return v;
      }
      case 2: {
        // Amplitude modulation breaks the lattice self-similarity that
        // otherwise aliases inside the search window.
        const double u = std::cos(checker_rot) * x + std::sin(checker_rot) * y;
        const double w = -std::sin(checker_rot) * x + std::cos(checker_rot) * y;
        const double mod = 0.6 + 0.4 * checker_mod.eval(x, y) / std::max(checker_mod.amp, 1e-9);
        const double board = std::sin(checker_qu * u + checker_phase[c]) *
                             std::sin(checker_qv * w + checker_phase[c] * 0.7);
        return 0.5 + 0.45 * mod * board + 0.08 * tex[c][0].eval(x, y) / std::max(std::fabs(tex[c][0].amp), 1e-9);
      }
      default: {
        // Octave stack with incommensurate wavelengths and orientations.
        double v = 0.0, norm = 0.0;
        for (const Wave& w : tex[c]) {
          v += w.eval(x, y);
          norm += std::fabs(w.amp);
        }
        return norm > 0.0 ? 0.5 + 0.45 * v / norm : 0.5;
      }
    }
  }

  double background_channel(double x, double y, int c) const {
    return bg_base[c] + bg_slope[c] * (x + y) / (2.0 * size) + bg_wave[c].eval(x, y) +
           bg_detail[c].eval(x, y);
  }

  void render(double x, double y, double out[3]) const {
    const double dist = object_dist(x, y);
    // ~1.5 px soft edge
    const double t = std::clamp((1.5 - dist) / 3.0, 0.0, 1.0);
    const double m = t * t * (3.0 - 2.0 * t);
    for (int c = 0; c < 3; ++c) {
      const double tex = texture_channel(x, y, c);
      const double bg = background_channel(x, y, c);
      out[c] = std::clamp(bg + m * (tex - bg), 0.0, 1.0);
    }
  }
};

Scene draw_scene(Rng& rng, const SyntheticConfig& cfg) {
  Scene s;
  s.size = cfg.size;
  const double sz = cfg.size;
  const double c = (sz - 1.0) / 2.0;
  s.ox = c + rng.uniform(-0.08, 0.08) * sz;
  s.oy = c + rng.uniform(-0.08, 0.08) * sz;
  s.ra = rng.uniform(0.26, 0.40) * sz;
  s.rb = rng.uniform(0.26, 0.40) * sz;
  const double beta = rng.uniform(0.0, kTau / 2.0);
  s.cos_b = std::cos(beta);
  s.sin_b = std::sin(beta);

  if (cfg.texture == "waves") {
    s.kind = 0;
  } else if (cfg.texture == "blobs") {
    s.kind = 1;
  } else if (cfg.texture == "checker") {
    s.kind = 2;
  } else {
    s.kind = static_cast<int>(rng.below(3));
  }

  // All texture styles draw from the rng in a fixed order regardless of
  // which one ends up used, keeping streams aligned across configs.
  // Octave wavelengths span coarse-to-fine so descriptors stay unambiguous
  // across a multi-cell search window.
  const double octave_wl[5] = {26.0, 15.0, 9.5, 6.0, 4.5};
  for (int c3 = 0; c3 < 3; ++c3) {
    for (int k = 0; k < 5; ++k) {
      const double amp = rng.uniform(0.6, 1.0) / (1.0 + 0.35 * k);
      const double wl = octave_wl[k] * rng.uniform(0.85, 1.2);
      s.tex[c3].push_back(draw_wave(rng, amp, wl, wl * 1.001));
    }
  }
  const int blob_count = 12 + static_cast<int>(rng.below(6));
  for (int b = 0; b < blob_count; ++b) {
    Blob blob;
    blob.cx = rng.uniform(0.1, 0.9) * sz;
    blob.cy = rng.uniform(0.1, 0.9) * sz;
    const double sigma = rng.uniform(2.5, 7.0);
    blob.inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    for (int c3 = 0; c3 < 3; ++c3) {
      blob.amp[c3] = rng.uniform(0.35, 0.9) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    }
    s.blobs.push_back(blob);
  }
  s.checker_qu = kTau / rng.uniform(8.0, 16.0);
  s.checker_qv = kTau / rng.uniform(8.0, 16.0);
  s.checker_rot = rng.uniform(0.0, kTau / 2.0);
  for (int c3 = 0; c3 < 3; ++c3) s.checker_phase[c3] = rng.uniform(0.0, kTau);
  s.checker_mod = draw_wave(rng, 1.0, 0.45 * sz, 0.9 * sz);

  for (int c3 = 0; c3 < 3; ++c3) {
    s.bg_base[c3] = rng.uniform(0.16, 0.28);
    s.bg_slope[c3] = rng.uniform(0.08, 0.18);
    s.bg_wave[c3] = draw_wave(rng, rng.uniform(0.04, 0.08), 0.5 * sz, 1.1 * sz);
    s.bg_detail[c3] = draw_wave(rng, rng.uniform(0.04, 0.09), 7.0, 14.0);
  }
  return s;
}

struct Deformation {
  double cx = 0.0, cy = 0.0;          // pivot
  double m[4] = {1.0, 0.0, 0.0, 1.0};  // row-major 2x2
  double tx = 0.0, ty = 0.0;
  Wave warp_u[2], warp_v[2];

  // Displacement form keeps pure translations exactly constant in the
  // stored flow.
  void displacement(double x, double y, double* u, double* v) const {
    const double dx = x - cx, dy = y - cy;
    *u = (m[0] - 1.0) * dx + m[1] * dy + tx + warp_u[0].eval(x, y) + warp_u[1].eval(x, y);
    *v = m[2] * dx + (m[3] - 1.0) * dy + ty + warp_v[0].eval(x, y) + warp_v[1].eval(x, y);
  }

  void jacobian(double x, double y, double j[4]) const {
    j[0] = m[0] + warp_u[0].dx(x, y) + warp_u[1].dx(x, y);
    j[1] = m[1] + warp_u[0].dy(x, y) + warp_u[1].dy(x, y);
    j[2] = m[2] + warp_v[0].dx(x, y) + warp_v[1].dx(x, y);
    j[3] = m[3] + warp_v[0].dy(x, y) + warp_v[1].dy(x, y);
  }
};

Deformation draw_deformation(Rng& rng, const SyntheticConfig& cfg) {
  Deformation d;
  const double sz = cfg.size;
  d.cx = (sz - 1.0) / 2.0;
  d.cy = d.cx;
  const double sx = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double sy = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double theta = rng.uniform(-cfg.rot_max_deg, cfg.rot_max_deg) * kTau / 360.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  d.m[0] = ct * sx;
  d.m[1] = -st * sy;
  d.m[2] = st * sx;
  d.m[3] = ct * sy;
  d.tx = rng.uniform(-cfg.trans_max, cfg.trans_max);
  d.ty = rng.uniform(-cfg.trans_max, cfg.trans_max);

  const double min_wl = std::max(4.0, cfg.local_warp_smoothness * sz);
  const double max_wl = 1.2 * sz;
  // Split the amplitude budget so the two terms can never exceed it.
  for (int comp = 0; comp < 2; ++comp) {
    const double f1 = rng.uniform(0.3, 0.7);
    Wave* pair = comp == 0 ? d.warp_u : d.warp_v;
    pair[0] = draw_wave(rng, cfg.local_warp_amp * f1, min_wl, max_wl);
    pair[1] = draw_wave(rng, cfg.local_warp_amp * (1.0 - f1), min_wl, max_wl);
  }
  return d;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (size < 16) throw ConfigError("synthetic: size must be >= 16");
  if (scale_min > scale_max || scale_min < 0.5 || scale_max > 2.0) {
    throw ConfigError("synthetic: scale range must satisfy 0.5 <= min <= max <= 2");
  }
  if (rot_max_deg < 0.0 || rot_max_deg > 45.0) {
    throw ConfigError("synthetic: rotation range must lie in [0, 45] degrees");
  }
  if (trans_max < 0.0 || trans_max > size / 2.0) {
    throw ConfigError("synthetic: translation range must lie in [0, size/2]");
  }
  if (local_warp_amp < 0.0 || local_warp_amp > 8.0) {
    throw ConfigError("synthetic: local warp amplitude must lie in [0, 8] px");
  }
  if (local_warp_smoothness <= 0.0 || local_warp_smoothness > 2.0) {
    throw ConfigError("synthetic: warp smoothness must lie in (0, 2]");
  }
  if (texture != "auto" && texture != "waves" && texture != "blobs" && texture != "checker") {
    throw ConfigError("synthetic: unknown texture '" + texture + "'");
  }
}

int SyntheticPair::mask_count() const {
  int n = 0;
  for (std::uint8_t m : fg_mask) n += m ? 1 : 0;
  return n;
}

SyntheticPair gen_pair(std::uint64_t seed, const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(seed ^ 0xA5F152E9D4B3C271ull);
  const Deformation def = draw_deformation(rng, cfg);
  const Scene scene = draw_scene(rng, cfg);
  const int sz = cfg.size;

  SyntheticPair pair;
  pair.seed = seed;
  pair.target = Image(sz, sz);
  double rgb[3];
  for (int y = 0; y < sz; ++y) {
    for (int x = 0; x < sz; ++x) {
      scene.render(x, y, rgb);
      for (int c = 0; c < 3; ++c) pair.target.set(y, x, c, rgb[c]);
    }
  }

  pair.source = Image(sz, sz);
  pair.gt_flow = FlowField(sz, sz);
  pair.fg_mask.assign(static_cast<std::size_t>(sz) * sz, 0);
  std::vector<double> field_vals(static_cast<std::size_t>(sz) * sz * 6);
  const double* tgt = pair.target.pixels.data();
  for (int y = 0; y < sz; ++y) {
    for (int x = 0; x < sz; ++x) {
      double u, v, jac[4];
      def.displacement(x, y, &u, &v);
      def.jacobian(x, y, jac);
      const double mx = x + u, my = y + v;
      const Taps taps = make_taps(mx, my, sz, sz, 3);
      for (int c = 0; c < 3; ++c) pair.source.set(y, x, c, tap_value(tgt, taps, c));
      pair.gt_flow.set(y, x, u, v);
      pair.fg_mask[static_cast<std::size_t>(y) * sz + x] = scene.inside_object(mx, my) ? 1 : 0;
      double* f = &field_vals[(static_cast<std::size_t>(y) * sz + x) * 6];
      f[0] = jac[0];
      f[1] = jac[1];
      f[2] = jac[2];
      f[3] = jac[3];
      f[4] = u;
      f[5] = v;
    }
  }
  pair.gt_field = AffineField(Tensor::from_values({sz, sz, 6}, std::move(field_vals)));
  return pair;
}

void gen_keypoints(const SyntheticPair& pair, int count, std::uint64_t seed,
                   KeypointSet* source_kps, KeypointSet* target_kps) {
  Rng rng(seed ^ 0x7C2D9B1E4F6A5380ull);
  source_kps->points.clear();
  target_kps->points.clear();
  const int h = pair.source.height, w = pair.source.width;
  int id = 0;
  int attempts = 0;
  while (id < count && attempts < 10000) {
    ++attempts;
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
    if (!pair.masked(y, x)) continue;
    source_kps->points.push_back({id, static_cast<double>(x), static_cast<double>(y)});
    target_kps->points.push_back({id, x + pair.gt_flow.u(y, x), y + pair.gt_flow.v(y, x)});
    ++id;
  }
  if (id < count) throw DataError("gen_keypoints: foreground too small for requested count");
}

void save_pair(const SyntheticPair& pair, const std::string& dir) {
  ensure_dir(dir);
  save_ppm(pair.source, dir + "/source.ppm");
  save_ppm(pair.target, dir + "/target.ppm");
  const int h = pair.source.height, w = pair.source.width;
  std::vector<double> mask_vals(pair.fg_mask.begin(), pair.fg_mask.end());
  TensorFile file;
  file.step = pair.seed;
  file.meta = "synthetic-pair";
  file.tensors.emplace_back("gt_field", pair.gt_field.params);
  file.tensors.emplace_back("fg_mask", Tensor::from_values({h, w, 1}, std::move(mask_vals)));
  write_tensor_file(dir + "/gt.rtnt", file);
}

SyntheticPair load_pair(const std::string& dir) {
  SyntheticPair pair;
  pair.source = load_ppm(dir + "/source.ppm");
  pair.target = load_ppm(dir + "/target.ppm");
  TensorFile file = read_tensor_file(dir + "/gt.rtnt");
  const Tensor* field = file.find("gt_field");
  const Tensor* mask = file.find("fg_mask");
  if (!field || !mask) throw DataError(dir + "/gt.rtnt: missing gt_field or fg_mask");
  pair.gt_field = AffineField(*field);
  pair.gt_flow = flow_of(pair.gt_field);
  pair.seed = file.step;
  pair.fg_mask.resize(mask->size());
  for (std::size_t i = 0; i < mask->size(); ++i) {
    pair.fg_mask[i] = mask->values()[i] != 0.0 ? 1 : 0;
  }
  if (pair.gt_field.height() != pair.source.height || pair.gt_field.width() != pair.source.width) {
    throw DataError(dir + ": ground-truth grid does not match image size");
  }
  return pair;
}

}  // namespace rtn
