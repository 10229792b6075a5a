#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msemu/errors.hpp"

namespace msemu {

/// A set of distinct points in the unit cube [0,1]^d.
class Design {
public:
    Design() = default;
    /// Validates coordinates in [0,1] and pairwise distinctness.
    explicit Design(Eigen::MatrixXd points);

    int n() const { return static_cast<int>(pts_.rows()); }
    int dim() const { return static_cast<int>(pts_.cols()); }
    const Eigen::MatrixXd& points() const { return pts_; }
    Eigen::VectorXd point(int i) const { return pts_.row(i).transpose(); }

    /// First n_j points as their own Design (validation skipped; a subset of
    /// a distinct set is distinct).
    Design prefix(int n_j) const;

    /// Half the minimum pairwise distance, cached after first call.
    double separation_distance() const;

private:
    Eigen::MatrixXd pts_;
    mutable double q_cache_ = -1.0;
};

/// A design plus strictly increasing prefix sizes realizing the nesting
/// X_1 subset ... subset X_J = X.
class NestedDesign {
public:
    NestedDesign() = default;
    NestedDesign(Design design, std::vector<int> stage_sizes);

    const Design& design() const { return design_; }
    const std::vector<int>& stage_sizes() const { return sizes_; }
    int stages() const { return static_cast<int>(sizes_.size()); }
    Design stage_design(int j) const { return design_.prefix(sizes_.at(j)); } ///< j is 0-based

private:
    Design design_;
    std::vector<int> sizes_;
};

struct NetOptions {
    bool scramble = true; ///< nested digit scrambling + within-cell jitter
};

/// b^m points of a digital (0,m,s)-net in base b (prime, s <= b), ordered so
/// every prefix of size b^{m'} is itself a (0,m',s)-net. Scrambling applies
/// seed-driven nested digit permutations per coordinate plus a uniform jitter
/// inside the final depth-m cell, both of which preserve the net property.
Design generate_net(int b, int m, int s, std::uint64_t seed, const NetOptions& opts = {});

/// True iff every base-b elementary interval of volume b^{-m} contains
/// exactly one point, over all shape decompositions d_1+...+d_s = m.
bool verify_net(const Design& X, int b, int m, int s);

/// q_X: half the minimum pairwise distance. Requires n >= 2.
double separation_distance(const Design& X);

/// Approximate fill distance sup_x min_i ||x - x_i|| over [0,1]^d, computed
/// against a candidate set: a resolution^d grid for d <= 3, or ~1e5
/// low-discrepancy candidates for d > 3. Underestimates the supremum by at
/// most half the candidate-set mesh.
double fill_distance(const Design& X, int resolution = 0);

/// Prefix-sliced nested design; sizes strictly increasing with last == n.
NestedDesign nest(Design X, std::vector<int> stage_sizes);

/// CSV with header x1,...,xd. Round-trip exact (17 significant digits).
void write_design_csv(const Design& X, const std::string& path);
Design read_design_csv(const std::string& path);

/// JSON sidecar {"stage_sizes":[...]} next to a design CSV.
void write_stage_sidecar(const std::vector<int>& sizes, const std::string& path);
std::vector<int> read_stage_sidecar(const std::string& path);

/// Uniform-cell index over a point set for radius queries and nearest
/// neighbors. Cells are sized for ~1 point per cell.
class NeighborGrid {
public:
    explicit NeighborGrid(const Eigen::MatrixXd& pts);

    /// Indices of points within `radius` (Euclidean) of x.
    std::vector<int> within(const Eigen::VectorXd& x, double radius) const;

    /// Distance from x to its nearest point (excluding index `exclude`).
    double nearest_distance(const Eigen::VectorXd& x, int exclude = -1) const;

    /// Visit all unordered pairs (i < j) with distance < radius.
    void for_each_pair(double radius, const std::function<void(int, int, double)>& fn) const;

private:
    const Eigen::MatrixXd& pts_;
    int d_ = 0;
    double cell_ = 1.0;
    int cells_per_axis_ = 1;
    std::vector<std::vector<int>> buckets_;
    std::int64_t bucket_of(const Eigen::VectorXd& x) const;
    std::int64_t bucket_index(const std::vector<int>& c) const;
    std::vector<int> cell_coords(const Eigen::VectorXd& x) const;
};

} // namespace msemu
