#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "core/errors.hpp"

namespace pixelgen {

GaussianFit GaussianFit::from_rows(const std::vector<double>& rows, int64_t n, int64_t d, double ridge) {
    if (n < 1) fail(ErrorCode::contract, "GaussianFit: need at least one row");
    GaussianFit fit;
    fit.dim = d;
    fit.count = n;
    fit.mean.assign(static_cast<size_t>(d), 0.0);
    fit.cov.assign(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) fit.mean[static_cast<size_t>(j)] += rows[static_cast<size_t>(i * d + j)];
    for (auto& m : fit.mean) m /= static_cast<double>(n);
    if (n > 1) {
        for (int64_t i = 0; i < n; ++i) {
            const double* r = rows.data() + i * d;
            for (int64_t a = 0; a < d; ++a) {
                double da = r[a] - fit.mean[static_cast<size_t>(a)];
                for (int64_t b = a; b < d; ++b)
                    fit.cov[static_cast<size_t>(a * d + b)] += da * (r[b] - fit.mean[static_cast<size_t>(b)]);
            }
        }
        for (int64_t a = 0; a < d; ++a)
            for (int64_t b = a; b < d; ++b) {
                double v = fit.cov[static_cast<size_t>(a * d + b)] / static_cast<double>(n - 1);
                fit.cov[static_cast<size_t>(a * d + b)] = v;
                fit.cov[static_cast<size_t>(b * d + a)] = v;
            }
    }
    for (int64_t a = 0; a < d; ++a) fit.cov[static_cast<size_t>(a * d + a)] += ridge;
    return fit;
}

void jacobi_eigensym(std::vector<double>& a, std::vector<double>& eigvecs, std::vector<double>& eigvals,
                     int64_t d, double tol) {
    eigvecs.assign(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < d; ++i) eigvecs[static_cast<size_t>(i * d + i)] = 1.0;
    auto at = [&](int64_t r, int64_t c) -> double& { return a[static_cast<size_t>(r * d + c)]; };
    auto vt = [&](int64_t r, int64_t c) -> double& { return eigvecs[static_cast<size_t>(r * d + c)]; };

    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (int64_t p = 0; p < d; ++p)
            for (int64_t q = p + 1; q < d; ++q) off += at(p, q) * at(p, q);
        if (std::sqrt(2.0 * off) < tol) break;
        for (int64_t p = 0; p < d; ++p) {
            for (int64_t q = p + 1; q < d; ++q) {
                double apq = at(p, q);
                if (apq == 0.0) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int64_t i = 0; i < d; ++i) {
                    double aip = at(i, p), aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(i, q) = s * aip + c * aiq;
                }
                for (int64_t i = 0; i < d; ++i) {
                    double api = at(p, i), aqi = at(q, i);
                    at(p, i) = c * api - s * aqi;
                    at(q, i) = s * api + c * aqi;
                }
                for (int64_t i = 0; i < d; ++i) {
                    double vip = vt(i, p), viq = vt(i, q);
                    vt(i, p) = c * vip - s * viq;
                    vt(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    eigvals.resize(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) eigvals[static_cast<size_t>(i)] = at(i, i);
}

namespace {

std::vector<double> matmul_dd(const std::vector<double>& a, const std::vector<double>& b, int64_t d) {
    std::vector<double> c(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t k = 0; k < d; ++k) {
            double av = a[static_cast<size_t>(i * d + k)];
            for (int64_t j = 0; j < d; ++j) c[static_cast<size_t>(i * d + j)] += av * b[static_cast<size_t>(k * d + j)];
        }
    return c;
}

void symmetrize(std::vector<double>& a, int64_t d) {
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = i + 1; j < d; ++j) {
            double v = 0.5 * (a[static_cast<size_t>(i * d + j)] + a[static_cast<size_t>(j * d + i)]);
            a[static_cast<size_t>(i * d + j)] = v;
            a[static_cast<size_t>(j * d + i)] = v;
        }
}

// symmetric PSD square root via eigendecomposition, negative eigenvalues clamped
std::vector<double> sqrtm_psd(std::vector<double> a, int64_t d) {
    symmetrize(a, d);
    std::vector<double> v, lam;
    jacobi_eigensym(a, v, lam, d);
    std::vector<double> out(static_cast<size_t>(d * d), 0.0);
    for (int64_t k = 0; k < d; ++k) {
        double s = lam[static_cast<size_t>(k)] > 0 ? std::sqrt(lam[static_cast<size_t>(k)]) : 0.0;
        if (s == 0.0) continue;
        for (int64_t i = 0; i < d; ++i) {
            double vis = v[static_cast<size_t>(i * d + k)] * s;
            for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(i * d + j)] += vis * v[static_cast<size_t>(j * d + k)];
        }
    }
    return out;
}

double trace(const std::vector<double>& a, int64_t d) {
    double t = 0.0;
    for (int64_t i = 0; i < d; ++i) t += a[static_cast<size_t>(i * d + i)];
    return t;
}

}  // namespace

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    if (a.dim != b.dim)
        fail(ErrorCode::dimension, "frechet_distance: dimension mismatch " + std::to_string(a.dim) + " vs " +
                                       std::to_string(b.dim));
    int64_t d = a.dim;
    double mean_term = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        double dm = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
        mean_term += dm * dm;
    }
    std::vector<double> sa = sqrtm_psd(a.cov, d);
    std::vector<double> inner = matmul_dd(matmul_dd(sa, b.cov, d), sa, d);
    std::vector<double> s = sqrtm_psd(std::move(inner), d);
    double fd = mean_term + trace(a.cov, d) + trace(b.cov, d) - 2.0 * trace(s, d);
    return fd > 0.0 ? fd : 0.0;
}

namespace {

double sq_dist(const double* x, const double* y, int64_t d) {
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        double diff = x[i] - y[i];
        s += diff * diff;
    }
    return s;
}

// squared distance to the k-th nearest neighbor within the same set, self excluded
std::vector<double> knn_radii_sq(const std::vector<double>& rows, int64_t n, int64_t d, int64_t k) {
    std::vector<double> radii(static_cast<size_t>(n));
    std::vector<double> dists;
    for (int64_t i = 0; i < n; ++i) {
        dists.clear();
        for (int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dists.push_back(sq_dist(rows.data() + i * d, rows.data() + j * d, d));
        }
        std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
        radii[static_cast<size_t>(i)] = dists[static_cast<size_t>(k - 1)];
    }
    return radii;
}

double coverage(const std::vector<double>& points, int64_t np, const std::vector<double>& anchors, int64_t na,
                const std::vector<double>& anchor_radii_sq, int64_t d) {
    int64_t covered = 0;
    for (int64_t i = 0; i < np; ++i) {
        for (int64_t j = 0; j < na; ++j) {
            if (sq_dist(points.data() + i * d, anchors.data() + j * d, d) <= anchor_radii_sq[static_cast<size_t>(j)]) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(np);
}

}  // namespace

std::pair<double, double> knn_precision_recall(const std::vector<double>& real_rows, int64_t n_real,
                                               const std::vector<double>& gen_rows, int64_t n_gen, int64_t d,
                                               int64_t k) {
    if (k < 1 || k >= std::min(n_real, n_gen))
        fail(ErrorCode::config, "knn_precision_recall: need 1 <= k < min(n_real, n_gen), got k=" +
                                    std::to_string(k) + " with " + std::to_string(n_real) + " real / " +
                                    std::to_string(n_gen) + " generated");
    std::vector<double> real_radii = knn_radii_sq(real_rows, n_real, d, k);
    std::vector<double> gen_radii = knn_radii_sq(gen_rows, n_gen, d, k);
    double precision = coverage(gen_rows, n_gen, real_rows, n_real, real_radii, d);
    double recall = coverage(real_rows, n_real, gen_rows, n_gen, gen_radii, d);
    return {precision, recall};
}

bool MetricsReport::finite() const {
    return std::isfinite(frechet) && std::isfinite(precision) && std::isfinite(recall);
}

std::string MetricsReport::csv_header() { return "frechet,precision,recall,n_real,n_gen,k"; }

std::string MetricsReport::csv_row() const {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%lld,%lld,%lld", frechet, precision, recall,
                  static_cast<long long>(n_real), static_cast<long long>(n_gen), static_cast<long long>(k));
    return buf;
}

std::string MetricsReport::text() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "frechet   %.6f\nprecision %.4f\nrecall    %.4f\n(n_real=%lld, n_gen=%lld, k=%lld)", frechet,
                  precision, recall, static_cast<long long>(n_real), static_cast<long long>(n_gen),
                  static_cast<long long>(k));
    return buf;
}

MetricsReport compute_metrics(const std::vector<double>& real_feats, int64_t n_real,
                              const std::vector<double>& gen_feats, int64_t n_gen, int64_t d, int64_t k) {
    MetricsReport report;
    report.n_real = n_real;
    report.n_gen = n_gen;
    report.k = k;
    GaussianFit fa = GaussianFit::from_rows(real_feats, n_real, d);
    GaussianFit fb = GaussianFit::from_rows(gen_feats, n_gen, d);
    report.frechet = frechet_distance(fa, fb);
    auto [precision, recall] = knn_precision_recall(real_feats, n_real, gen_feats, n_gen, d, k);
    report.precision = precision;
    report.recall = recall;
    return report;
}

}  // namespace pixelgen
