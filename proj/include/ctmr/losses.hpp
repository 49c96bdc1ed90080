#pragma once

// Training objectives: least-squares adversarial terms, mean-reduced L1
// cycle/identity terms, SSIM term, and their weighted combination.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "autograd.hpp"

namespace ctmr {

struct LossWeights {
  double lambda_cyc = 10.0;
  double lambda_id = 5.0;
  double lambda_ssim = 1.0;

  void validate() const {
    require(lambda_cyc >= 0 && lambda_id >= 0 && lambda_ssim >= 0, "loss weights must be non-negative");
  }
  friend bool operator==(const LossWeights &, const LossWeights &) = default;
};

struct SsimConstants {
  double c1 = 0.0001;
  double c2 = 0.009;

  void validate() const { require(c1 > 0 && c2 > 0, "SSIM constants must be positive"); }
};

/// How SSIM statistics are gathered.
///   Global:   whole-image central moments per sample (default)
///   Windowed: 11x11 Gaussian (sigma 1.5) local moments, averaged over valid positions
///   Literal:  batch-level non-central moments across the two translations,
///             numerator mu_a * mu_b + c1 (comparison experiments only)
enum class SsimMode { Global, Windowed, Literal };

inline std::string to_string(SsimMode m) {
  switch (m) {
  case SsimMode::Global: return "global";
  case SsimMode::Windowed: return "windowed";
  case SsimMode::Literal: return "literal";
  }
  return "global";
}

inline SsimMode parse_ssim_mode(const std::string &s) {
  if (s == "global") return SsimMode::Global;
  if (s == "windowed") return SsimMode::Windowed;
  if (s == "literal") return SsimMode::Literal;
  throw ValidationError("unknown ssim_mode '" + s + "' (expected global, windowed or literal)");
}

struct LossBreakdown {
  double gan = 0, cycle = 0, identity = 0, ssim = 0, generator_total = 0, dis_ct = 0, dis_mr = 0;

  friend bool operator==(const LossBreakdown &, const LossBreakdown &) = default;
};

/// gan + lambda_cyc * cycle + lambda_id * identity + lambda_ssim * ssim
inline double generator_total_loss(const LossBreakdown &parts, const LossWeights &w) {
  return parts.gan + w.lambda_cyc * parts.cycle + w.lambda_id * parts.identity + w.lambda_ssim * parts.ssim;
}

/// mean((x - target)^2)
template <typename T> Var<T> mse_to(const Var<T> &x, T target) {
  double s = 0;
  for (T v : x.value().values()) s += (static_cast<double>(v) - target) * (static_cast<double>(v) - target);
  const double n = static_cast<double>(x.value().size());
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / n)), {x.node()}, [target, n](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    const T scale = static_cast<T>(2.0 * self.grad[0] / n);
    const auto &xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * (xv[i] - target);
  });
}

/// mean|a - b|
template <typename T> Var<T> l1_mean(const Var<T> &a, const Var<T> &b) {
  require(a.shape() == b.shape(), "L1: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double s = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
  const double n = static_cast<double>(a.value().size());
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(s / n)), {a.node(), b.node()}, [n](Node<T> &self) {
    const auto &av = self.inputs[0]->value;
    const auto &bv = self.inputs[1]->value;
    const T scale = static_cast<T>(self.grad[0] / n);
    for (int side = 0; side < 2; ++side) {
      if (!self.inputs[side]->requires_grad) continue;
      auto &g = self.inputs[side]->grad_buffer();
      const T sgn = side == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T d = av[i] - bv[i];
        if (d > 0) g[i] += sgn * scale;
        else if (d < 0) g[i] -= sgn * scale;
      }
    }
  });
}

/// E[(D_MR(G_MR(I_CT)) - 1)^2] + E[(D_CT(G_CT(I_MR)) - 1)^2]
template <typename T> Var<T> gan_loss(const Var<T> &d_scores_on_translated_mr, const Var<T> &d_scores_on_translated_ct) {
  return add(mse_to(d_scores_on_translated_mr, T(1)), mse_to(d_scores_on_translated_ct, T(1)));
}

template <typename T>
Var<T> cycle_loss(const Var<T> &x_mr, const Var<T> &recovered_mr, const Var<T> &x_ct, const Var<T> &recovered_ct) {
  return add(l1_mean(recovered_mr, x_mr), l1_mean(recovered_ct, x_ct));
}

template <typename T>
Var<T> identity_loss(const Var<T> &g_ct_on_ct, const Var<T> &x_ct, const Var<T> &g_mr_on_mr, const Var<T> &x_mr) {
  return add(l1_mean(g_ct_on_ct, x_ct), l1_mean(g_mr_on_mr, x_mr));
}

/// E[(D(real) - 1)^2] + E[D(translated)^2]
template <typename T> Var<T> discriminator_loss(const Var<T> &d_on_real, const Var<T> &d_on_translated) {
  return add(mse_to(d_on_real, T(1)), mse_to(d_on_translated, T(0)));
}

namespace detail {

// SSIM of one (u, v) statistic set and its partial derivatives with respect
// to the means, the variances and the covariance.
struct SsimTerms {
  double value, d_mu_x, d_mu_y, d_var_x, d_var_y, d_cov;
};

inline SsimTerms ssim_terms(double mx, double my, double vx, double vy, double cxy, const SsimConstants &k) {
  const double A = 2 * mx * my + k.c1, B = 2 * cxy + k.c2;
  const double C = mx * mx + my * my + k.c1, D = vx + vy + k.c2;
  const double s = (A * B) / (C * D);
  SsimTerms t{};
  t.value = s;
  t.d_mu_x = 2 * my * B / (C * D) - s * 2 * mx / C;
  t.d_mu_y = 2 * mx * B / (C * D) - s * 2 * my / C;
  t.d_var_x = -s / D;
  t.d_var_y = -s / D;
  t.d_cov = 2 * A / (C * D);
  return t;
}

// Whole-image statistics of u = (x+1)/2, v = (y+1)/2 for m samples.
template <typename T> struct GlobalStats {
  double mx = 0, my = 0, vx = 0, vy = 0, cxy = 0;
};

template <typename T> GlobalStats<T> global_stats(const T *x, const T *y, std::size_t m) {
  GlobalStats<T> s;
  for (std::size_t i = 0; i < m; ++i) {
    s.mx += 0.5 * (static_cast<double>(x[i]) + 1.0);
    s.my += 0.5 * (static_cast<double>(y[i]) + 1.0);
  }
  s.mx /= static_cast<double>(m);
  s.my /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = 0.5 * (static_cast<double>(x[i]) + 1.0) - s.mx;
    const double dy = 0.5 * (static_cast<double>(y[i]) + 1.0) - s.my;
    s.vx += dx * dx;
    s.vy += dy * dy;
    s.cxy += dx * dy;
  }
  s.vx /= static_cast<double>(m);
  s.vy /= static_cast<double>(m);
  s.cxy /= static_cast<double>(m);
  return s;
}

inline std::array<double, 11> gaussian_window_1d() {
  std::array<double, 11> g{};
  double total = 0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    total += g[i];
  }
  for (auto &v : g) v /= total;
  return g;
}

// Valid separable 11x11 Gaussian filtering of an h x w plane.
inline std::vector<double> gauss_valid(const std::vector<double> &in, std::size_t h, std::size_t w) {
  static const auto g = gaussian_window_1d();
  const std::size_t ho = h - 10, wo = w - 10;
  std::vector<double> tmp(h * wo), out(ho * wo);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < wo; ++c) {
      double s = 0;
      for (std::size_t k = 0; k < 11; ++k) s += g[k] * in[r * w + c + k];
      tmp[r * wo + c] = s;
    }
  for (std::size_t r = 0; r < ho; ++r)
    for (std::size_t c = 0; c < wo; ++c) {
      double s = 0;
      for (std::size_t k = 0; k < 11; ++k) s += g[k] * tmp[(r + k) * wo + c];
      out[r * wo + c] = s;
    }
  return out;
}

// Adjoint of gauss_valid: (ho x wo) -> (h x w).
inline std::vector<double> gauss_valid_adjoint(const std::vector<double> &in, std::size_t h, std::size_t w) {
  static const auto g = gaussian_window_1d();
  const std::size_t ho = h - 10, wo = w - 10;
  std::vector<double> tmp(h * wo, 0.0), out(h * w, 0.0);
  for (std::size_t r = 0; r < ho; ++r)
    for (std::size_t c = 0; c < wo; ++c)
      for (std::size_t k = 0; k < 11; ++k) tmp[(r + k) * wo + c] += g[k] * in[r * wo + c];
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < wo; ++c)
      for (std::size_t k = 0; k < 11; ++k) out[r * w + c + k] += g[k] * tmp[r * wo + c];
  return out;
}

template <typename T> Var<T> ssim_loss_global(const Var<T> &x, const Var<T> &y, const SsimConstants &k) {
  const Shape s = x.shape();
  const std::size_t m = s.c * s.h * s.w;
  std::vector<GlobalStats<T>> stats(s.n);
  std::vector<SsimTerms> terms(s.n);
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    stats[n] = global_stats(x.value().plane(n, 0), y.value().plane(n, 0), m);
    const auto &st = stats[n];
    terms[n] = ssim_terms(st.mx, st.my, st.vx, st.vy, st.cxy, k);
    total += 1.0 - terms[n].value;
  }
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(s.n))), {x.node(), y.node()},
                    [=](Node<T> &self) {
                      const double up = -static_cast<double>(self.grad[0]) / static_cast<double>(s.n);
                      const auto &xv = self.inputs[0]->value;
                      const auto &yv = self.inputs[1]->value;
                      for (std::size_t n = 0; n < s.n; ++n) {
                        const auto &st = stats[n];
                        const auto &t = terms[n];
                        const double md = static_cast<double>(m);
                        const T *xp = xv.plane(n, 0);
                        const T *yp = yv.plane(n, 0);
                        // d/dx = 1/2 d/du
                        if (self.inputs[0]->requires_grad) {
                          T *g = self.inputs[0]->grad_buffer().plane(n, 0);
                          for (std::size_t i = 0; i < m; ++i) {
                            const double du = 0.5 * (xp[i] + 1.0) - st.mx, dv = 0.5 * (yp[i] + 1.0) - st.my;
                            const double d = (t.d_mu_x + 2 * t.d_var_x * du + t.d_cov * dv) / md;
                            g[i] += static_cast<T>(up * 0.5 * d);
                          }
                        }
                        if (self.inputs[1]->requires_grad) {
                          T *g = self.inputs[1]->grad_buffer().plane(n, 0);
                          for (std::size_t i = 0; i < m; ++i) {
                            const double du = 0.5 * (xp[i] + 1.0) - st.mx, dv = 0.5 * (yp[i] + 1.0) - st.my;
                            const double d = (t.d_mu_y + 2 * t.d_var_y * dv + t.d_cov * du) / md;
                            g[i] += static_cast<T>(up * 0.5 * d);
                          }
                        }
                      }
                    });
}

template <typename T> Var<T> ssim_loss_windowed(const Var<T> &x, const Var<T> &y, const SsimConstants &k) {
  const Shape s = x.shape();
  require(s.h >= 11 && s.w >= 11, "windowed SSIM needs images of at least 11x11");
  const std::size_t planes = s.n * s.c, m = s.plane(), ho = s.h - 10, wo = s.w - 10, q = ho * wo;

  // Per plane: gradients of the mean SSIM map w.r.t. the filtered moments.
  struct PlaneGrad {
    std::vector<double> d_mx, d_my, d_m2x, d_m2y, d_mxy;
  };
  std::vector<PlaneGrad> grads(planes);
  double total = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T *xp = x.value().data() + p * m;
    const T *yp = y.value().data() + p * m;
    std::vector<double> u(m), v(m), uu(m), vv(m), uv(m);
    for (std::size_t i = 0; i < m; ++i) {
      u[i] = 0.5 * (xp[i] + 1.0);
      v[i] = 0.5 * (yp[i] + 1.0);
      uu[i] = u[i] * u[i];
      vv[i] = v[i] * v[i];
      uv[i] = u[i] * v[i];
    }
    const auto mu = gauss_valid(u, s.h, s.w), mv = gauss_valid(v, s.h, s.w);
    const auto muu = gauss_valid(uu, s.h, s.w), mvv = gauss_valid(vv, s.h, s.w), muv = gauss_valid(uv, s.h, s.w);
    PlaneGrad pg{std::vector<double>(q), std::vector<double>(q), std::vector<double>(q), std::vector<double>(q),
                 std::vector<double>(q)};
    double plane_sum = 0;
    for (std::size_t i = 0; i < q; ++i) {
      const double vx = muu[i] - mu[i] * mu[i], vy = mvv[i] - mv[i] * mv[i], cxy = muv[i] - mu[i] * mv[i];
      const auto t = ssim_terms(mu[i], mv[i], vx, vy, cxy, k);
      plane_sum += t.value;
      // chain through var = m2 - mu^2 and cov = mxy - mu_x mu_y
      pg.d_mx[i] = t.d_mu_x - 2 * mu[i] * t.d_var_x - mv[i] * t.d_cov;
      pg.d_my[i] = t.d_mu_y - 2 * mv[i] * t.d_var_y - mu[i] * t.d_cov;
      pg.d_m2x[i] = t.d_var_x;
      pg.d_m2y[i] = t.d_var_y;
      pg.d_mxy[i] = t.d_cov;
    }
    total += 1.0 - plane_sum / static_cast<double>(q);
    grads[p] = std::move(pg);
  }
  return make_op<T>(
      Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(planes))), {x.node(), y.node()},
      [=](Node<T> &self) {
        const double up = -static_cast<double>(self.grad[0]) / static_cast<double>(planes * q);
        for (std::size_t p = 0; p < planes; ++p) {
          const auto &pg = grads[p];
          const T *xp = self.inputs[0]->value.data() + p * m;
          const T *yp = self.inputs[1]->value.data() + p * m;
          const auto a_mx = gauss_valid_adjoint(pg.d_mx, s.h, s.w), a_my = gauss_valid_adjoint(pg.d_my, s.h, s.w);
          const auto a_m2x = gauss_valid_adjoint(pg.d_m2x, s.h, s.w),
                     a_m2y = gauss_valid_adjoint(pg.d_m2y, s.h, s.w);
          const auto a_mxy = gauss_valid_adjoint(pg.d_mxy, s.h, s.w);
          if (self.inputs[0]->requires_grad) {
            T *g = self.inputs[0]->grad_buffer().data() + p * m;
            for (std::size_t i = 0; i < m; ++i) {
              const double u = 0.5 * (xp[i] + 1.0), v = 0.5 * (yp[i] + 1.0);
              g[i] += static_cast<T>(up * 0.5 * (a_mx[i] + 2 * u * a_m2x[i] + v * a_mxy[i]));
            }
          }
          if (self.inputs[1]->requires_grad) {
            T *g = self.inputs[1]->grad_buffer().data() + p * m;
            for (std::size_t i = 0; i < m; ++i) {
              const double u = 0.5 * (xp[i] + 1.0), v = 0.5 * (yp[i] + 1.0);
              g[i] += static_cast<T>(up * 0.5 * (a_my[i] + 2 * v * a_m2y[i] + u * a_mxy[i]));
            }
          }
        }
      });
}

} // namespace detail

/// 1 - SSIM(x, y), images in [-1, 1] remapped to [0, 1]; mean over the batch.
template <typename T>
Var<T> ssim_loss(const Var<T> &x, const Var<T> &y, const SsimConstants &k = {}, SsimMode mode = SsimMode::Global) {
  require(x.shape() == y.shape(), "SSIM: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  switch (mode) {
  case SsimMode::Global: return detail::ssim_loss_global(x, y, k);
  case SsimMode::Windowed: return detail::ssim_loss_windowed(x, y, k);
  case SsimMode::Literal: break;
  }
  throw ValidationError("ssim_loss: literal mode is a batch formula over two translations; use ssim_literal_loss");
}

/// Batch-level formula over the two translations a = G_MR(I_CT), b = G_CT(I_MR):
///   1 - (mu_a mu_b + c1)(2 E[ab] + c2) / ((mu_a^2 + mu_b^2 + c1)(E[a^2]^2 + E[b^2]^2 + c2))
/// with non-central moments over the whole batch (both remapped to [0, 1]).
template <typename T> Var<T> ssim_literal_loss(const Var<T> &a, const Var<T> &b, const SsimConstants &k = {}) {
  require(a.shape() == b.shape(), "SSIM: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  const std::size_t m = a.value().size();
  const double md = static_cast<double>(m);
  double ma = 0, mb = 0, qa = 0, qb = 0, r = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double u = 0.5 * (a.value()[i] + 1.0), v = 0.5 * (b.value()[i] + 1.0);
    ma += u;
    mb += v;
    qa += u * u;
    qb += v * v;
    r += u * v;
  }
  ma /= md;
  mb /= md;
  qa /= md;
  qb /= md;
  r /= md;
  const double A = ma * mb + k.c1, B = 2 * r + k.c2, C = ma * ma + mb * mb + k.c1, D = qa * qa + qb * qb + k.c2;
  const double s = A * B / (C * D);
  const double d_ma = mb * B / (C * D) - s * 2 * ma / C, d_mb = ma * B / (C * D) - s * 2 * mb / C;
  const double d_qa = -s * 2 * qa / D, d_qb = -s * 2 * qb / D, d_r = 2 * A / (C * D);
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(1.0 - s)), {a.node(), b.node()}, [=](Node<T> &self) {
    const double up = -static_cast<double>(self.grad[0]) / md;
    const auto &av = self.inputs[0]->value;
    const auto &bv = self.inputs[1]->value;
    for (int side = 0; side < 2; ++side) {
      if (!self.inputs[side]->requires_grad) continue;
      auto &g = self.inputs[side]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double u = 0.5 * (av[i] + 1.0), v = 0.5 * (bv[i] + 1.0);
        const double d = side == 0 ? d_ma + 2 * u * d_qa + v * d_r : d_mb + 2 * v * d_qb + u * d_r;
        g[i] += static_cast<T>(up * 0.5 * d);
      }
    }
  });
}

} // namespace ctmr
