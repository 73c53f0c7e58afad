#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "svq/dvae/stgp.hpp"
#include "svq/pose/pose.hpp"

namespace svq {

// Mean over frames and joints of the per-joint Euclidean distance.
double mje(const PoseSequence& a, const PoseSequence& b);
// Mean per-joint Euclidean distance between frame i of a and frame j of b.
double frame_cost(const PoseSequence& a, std::size_t i, const PoseSequence& b, std::size_t j);

using AlignmentPath = std::vector<std::pair<std::size_t, std::size_t>>;

struct DtwResult {
  double cost = 0.0;  // summed frame costs along the path
  AlignmentPath path;
};

// Steps (1,1), (1,0), (0,1). Backtracking prefers the diagonal, then (1,0),
// then (0,1) among equal-cost predecessors.
DtwResult dtw(const PoseSequence& a, const PoseSequence& b);
// Same DP over a precomputed [T1 x T2] cost matrix (row-major).
DtwResult dtw(std::span<const double> cost, std::size_t rows, std::size_t cols);

// Optimal-path cost divided by the path length.
double dtw_mje(const PoseSequence& generated, const PoseSequence& reference);

// True if path starts at (0,0), ends at (rows-1, cols-1) and only takes
// steps from the DTW step set.
bool valid_path(const AlignmentPath& path, std::size_t rows, std::size_t cols);

// Maps a pose sequence to a fixed-width feature vector.
using Embedder = std::function<std::vector<double>(const PoseSequence&)>;

// Mean of the frozen encoder's pooled features over the sequence's
// windows. Throws std::invalid_argument for sequences shorter than one
// window. The dVAE must outlive the returned function.
Embedder dvae_embedder(const StgpDvae& dvae);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t count = 0;
};

// Sample mean and unbiased covariance plus reg * I. Fewer than d + 1
// samples leaves the covariance dominated by the regularizer; a note is
// appended to `warnings` when given. Throws for fewer than 2 samples.
GaussianStats fit_gaussian(std::span<const std::vector<double>> samples, double reg = 1e-6,
                           std::vector<std::string>* warnings = nullptr);

// ||mu_p - mu_q||^2 + tr(S_p + S_q - 2 (S_p^1/2 S_q S_p^1/2)^1/2)
double frechet_distance(const GaussianStats& p, const GaussianStats& q);

struct FgdResult {
  double value = 0.0;
  std::vector<std::string> warnings;
};
FgdResult fgd_features(std::span<const std::vector<double>> real, std::span<const std::vector<double>> generated);
FgdResult fgd(std::span<const PoseSequence> real, std::span<const PoseSequence> generated, const Embedder& embed);

}  // namespace svq
