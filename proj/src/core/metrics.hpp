#pragma once

// Desk-scale generation metrics: feature-Frechet distance between Gaussian
// fits and the k-NN manifold precision/recall estimate.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace pixelgen {

struct GaussianFit {
    int64_t dim = 0;
    std::vector<double> mean;  // [dim]
    std::vector<double> cov;   // [dim*dim], symmetric PSD with a diagonal ridge
    int64_t count = 0;

    // Unbiased covariance of row-major `rows` (n x d) plus `ridge` on the diagonal.
    static GaussianFit from_rows(const std::vector<double>& rows, int64_t n, int64_t d, double ridge = 1e-6);
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. A is row-major
// d x d and is destroyed; V receives the eigenvectors (columns), evals the
// eigenvalues.
void jacobi_eigensym(std::vector<double>& a, std::vector<double>& eigvecs, std::vector<double>& eigvals,
                     int64_t d, double tol = 1e-10);

// ||mu_a-mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2); negative
// eigenvalues are clamped to zero inside the matrix square roots.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

// Radius of each point = distance to its k-th nearest neighbor within its own
// set (excluding self). Precision: fraction of generated points within the
// radius of at least one real point; recall: fraction of real points within
// the radius of at least one generated point.
std::pair<double, double> knn_precision_recall(const std::vector<double>& real_rows, int64_t n_real,
                                               const std::vector<double>& gen_rows, int64_t n_gen, int64_t d,
                                               int64_t k);

struct MetricsReport {
    double frechet = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    int64_t n_real = 0;
    int64_t n_gen = 0;
    int64_t k = 0;

    bool finite() const;
    static std::string csv_header();
    std::string csv_row() const;
    std::string text() const;
};

MetricsReport compute_metrics(const std::vector<double>& real_feats, int64_t n_real,
                              const std::vector<double>& gen_feats, int64_t n_gen, int64_t d, int64_t k);

}  // namespace pixelgen
