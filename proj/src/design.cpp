#include "msemu/design.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "msemu/util.hpp"

namespace msemu {

namespace {
constexpr double kBinEps = 1e-9; // absorbs float rounding of cell-corner coordinates
}

// ---------------------------------------------------------------------------
// NeighborGrid

NeighborGrid::NeighborGrid(const Eigen::MatrixXd& pts) : pts_(pts) {
    d_ = static_cast<int>(pts.cols());
    const auto n = pts.rows();
    // ~1 point per cell on average, capped so the bucket table stays small
    double target = std::pow(std::max<double>(n, 1), 1.0 / d_);
    cells_per_axis_ = std::max(1, std::min(static_cast<int>(target) + 1, 64));
    cell_ = 1.0 / cells_per_axis_;
    std::int64_t total = 1;
    for (int k = 0; k < d_; ++k) total *= cells_per_axis_;
    buckets_.resize(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < n; ++i)
        buckets_[static_cast<std::size_t>(bucket_of(pts.row(i).transpose()))].push_back(
            static_cast<int>(i));
}

std::vector<int> NeighborGrid::cell_coords(const Eigen::VectorXd& x) const {
    std::vector<int> c(d_);
    for (int k = 0; k < d_; ++k) {
        int v = static_cast<int>(std::floor(x[k] / cell_));
        c[k] = std::clamp(v, 0, cells_per_axis_ - 1);
    }
    return c;
}

std::int64_t NeighborGrid::bucket_index(const std::vector<int>& c) const {
    std::int64_t idx = 0;
    for (int k = 0; k < d_; ++k) idx = idx * cells_per_axis_ + c[k];
    return idx;
}

std::int64_t NeighborGrid::bucket_of(const Eigen::VectorXd& x) const {
    return bucket_index(cell_coords(x));
}

namespace {
// Visit all cells within Chebyshev distance `reach` of center; returns false
// from fn to stop early.
void visit_box(const std::vector<int>& center, int reach, int cells_per_axis, int d,
               const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> c(d);
    std::function<void(int)> rec = [&](int k) {
        if (k == d) {
            fn(c);
            return;
        }
        int lo = std::max(0, center[k] - reach), hi = std::min(cells_per_axis - 1, center[k] + reach);
        for (int v = lo; v <= hi; ++v) {
            c[k] = v;
            rec(k + 1);
        }
    };
    rec(0);
}
} // namespace

std::vector<int> NeighborGrid::within(const Eigen::VectorXd& x, double radius) const {
    std::vector<int> out;
    int reach = static_cast<int>(std::floor(radius / cell_)) + 1;
    double r2 = radius * radius;
    visit_box(cell_coords(x), reach, cells_per_axis_, d_, [&](const std::vector<int>& c) {
        for (int i : buckets_[static_cast<std::size_t>(bucket_index(c))]) {
            double dist2 = (pts_.row(i).transpose() - x).squaredNorm();
            if (dist2 < r2) out.push_back(i);
        }
    });
    return out;
}

double NeighborGrid::nearest_distance(const Eigen::VectorXd& x, int exclude) const {
    auto center = cell_coords(x);
    double best = std::numeric_limits<double>::infinity();
    // Any point outside the box of Chebyshev reach R lies at distance > R*cell,
    // so once best <= reach*cell the minimum is exact. Re-scanning inner cells
    // is wasteful but the loop exits after one or two shells for spread inputs.
    for (int reach = 1;; ++reach) {
        visit_box(center, reach, cells_per_axis_, d_, [&](const std::vector<int>& c) {
            for (int i : buckets_[static_cast<std::size_t>(bucket_index(c))]) {
                if (i == exclude) continue;
                double dist = (pts_.row(i).transpose() - x).norm();
                if (dist < best) best = dist;
            }
        });
        if (best <= reach * cell_ || reach >= cells_per_axis_) break;
    }
    return best;
}

void NeighborGrid::for_each_pair(double radius,
                                 const std::function<void(int, int, double)>& fn) const {
    const auto n = pts_.rows();
    int reach = static_cast<int>(std::floor(radius / cell_)) + 1;
    double r2 = radius * radius;
    for (int i = 0; i < static_cast<int>(n); ++i) {
        Eigen::VectorXd x = pts_.row(i).transpose();
        visit_box(cell_coords(x), reach, cells_per_axis_, d_, [&](const std::vector<int>& c) {
            for (int j : buckets_[static_cast<std::size_t>(bucket_index(c))]) {
                if (j <= i) continue;
                double dist2 = (pts_.row(j).transpose() - x).squaredNorm();
                if (dist2 < r2) fn(i, j, std::sqrt(dist2));
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Design

Design::Design(Eigen::MatrixXd points) : pts_(std::move(points)) {
    if (pts_.rows() == 0 || pts_.cols() == 0) throw argument_error("design must be nonempty");
    for (Eigen::Index i = 0; i < pts_.rows(); ++i)
        for (Eigen::Index j = 0; j < pts_.cols(); ++j) {
            double v = pts_(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw argument_error("design coordinate outside [0,1] at row " + std::to_string(i));
        }
    if (pts_.rows() >= 2 && !(separation_distance() > 0.0))
        throw argument_error("design points must be pairwise distinct");
}

Design Design::prefix(int n_j) const {
    if (n_j < 1 || n_j > n()) throw argument_error("prefix size out of range");
    Design p;
    p.pts_ = pts_.topRows(n_j);
    return p;
}

double Design::separation_distance() const {
    if (q_cache_ >= 0.0) return q_cache_;
    if (n() < 2) throw argument_error("separation distance needs at least two points");
    double best = std::numeric_limits<double>::infinity();
    if (n() <= 512) {
        for (int i = 0; i < n(); ++i)
            for (int j = i + 1; j < n(); ++j)
                best = std::min(best, (pts_.row(i) - pts_.row(j)).norm());
    } else {
        NeighborGrid grid(pts_);
        for (int i = 0; i < n(); ++i)
            best = std::min(best, grid.nearest_distance(pts_.row(i).transpose(), i));
    }
    q_cache_ = 0.5 * best;
    return q_cache_;
}

// ---------------------------------------------------------------------------
// NestedDesign

NestedDesign::NestedDesign(Design design, std::vector<int> stage_sizes)
    : design_(std::move(design)), sizes_(std::move(stage_sizes)) {
    if (sizes_.empty()) throw argument_error("nested design needs at least one stage");
    int prev = 0;
    for (int s : sizes_) {
        if (s <= prev) throw argument_error("stage sizes must be strictly increasing");
        prev = s;
    }
    if (sizes_.back() != design_.n())
        throw argument_error("last stage size must equal the design size");
}

NestedDesign nest(Design X, std::vector<int> stage_sizes) {
    return NestedDesign(std::move(X), std::move(stage_sizes));
}

// ---------------------------------------------------------------------------
// Digital nets

namespace {

bool is_prime(int b) {
    if (b < 2) return false;
    for (int p = 2; p * p <= b; ++p)
        if (b % p == 0) return false;
    return true;
}

// Upper-triangular Pascal matrix powers mod b: C_k[r][c] = binom(c, r) k^{c-r}.
std::vector<Eigen::MatrixXi> generator_matrices(int b, int m, int s) {
    Eigen::MatrixXi P = Eigen::MatrixXi::Zero(m, m);
    for (int r = 0; r < m; ++r) {
        // binom(c, r) mod b by the additive recurrence to avoid overflow
        for (int c = r; c < m; ++c) {
            if (c == r) {
                P(r, c) = 1;
            } else {
                int up = (r > 0) ? P(r - 1, c - 1) : 0;
                P(r, c) = (up + P(r, c - 1)) % b;
            }
        }
    }
    std::vector<Eigen::MatrixXi> mats;
    Eigen::MatrixXi C = Eigen::MatrixXi::Identity(m, m);
    for (int k = 0; k < s; ++k) {
        mats.push_back(C);
        Eigen::MatrixXi next = C * P;
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) next(r, c) %= b;
        C = next;
    }
    return mats;
}

// Permutation of {0..b-1} derived from a hash key.
std::vector<int> keyed_permutation(std::uint64_t key, int b) {
    std::vector<int> p(b);
    for (int i = 0; i < b; ++i) p[i] = i;
    Rng r(key);
    for (int i = b; i > 1; --i) std::swap(p[i - 1], p[static_cast<int>(r.below(i))]);
    return p;
}

} // namespace

Design generate_net(int b, int m, int s, std::uint64_t seed, const NetOptions& opts) {
    if (!is_prime(b)) throw argument_error("net base must be prime");
    if (s < 1 || s > b) throw argument_error("net dimension must satisfy 1 <= s <= b");
    if (m < 1) throw argument_error("net exponent m must be >= 1");
    if (m > 12) throw argument_error("net exponent m > 12 not supported");
    const std::int64_t n = static_cast<std::int64_t>(std::llround(std::pow(b, m)));
    auto mats = generator_matrices(b, m, s);
    Eigen::MatrixXd pts(n, s);
    std::vector<int> digits(m), scrambled(m);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t rest = i;
        for (int t = 0; t < m; ++t) {
            digits[t] = static_cast<int>(rest % b);
            rest /= b;
        }
        for (int k = 0; k < s; ++k) {
            // y = C_k a mod b
            for (int t = 0; t < m; ++t) {
                int acc = 0;
                for (int c = 0; c < m; ++c) acc += mats[k](t, c) * digits[c];
                scrambled[t] = acc % b;
            }
            double jitter = 0.0;
            if (opts.scramble) {
                // nested scrambling: the permutation for digit t keys on the
                // scrambled digits above it, so depth-t cells map onto
                // depth-t cells and the net property is preserved
                std::uint64_t prefix = 0;
                for (int t = 0; t < m; ++t) {
                    auto perm = keyed_permutation(hash_mix(seed, 0x5eedULL + k, t, prefix), b);
                    scrambled[t] = perm[scrambled[t]];
                    prefix = prefix * b + static_cast<std::uint64_t>(scrambled[t]);
                }
                Rng jr(hash_mix(seed, 0x717eULL + k, m, prefix));
                jitter = std::min(jr.uniform01(), 1.0 - 1e-6);
            }
            double v = 0.0, scale = 1.0;
            for (int t = 0; t < m; ++t) {
                scale /= b;
                v += scrambled[t] * scale;
            }
            pts(i, k) = v + jitter * scale;
        }
    }
    return Design(pts);
}

bool verify_net(const Design& X, int b, int m, int s) {
    if (s != X.dim()) throw argument_error("verify_net: dimension mismatch");
    if (m < 0) throw argument_error("verify_net: m must be >= 0");
    const std::int64_t n = static_cast<std::int64_t>(std::llround(std::pow(b, m)));
    if (X.n() != n) throw argument_error("verify_net: design size must be b^m");

    std::vector<int> shape(s, 0);
    std::vector<char> seen;
    std::function<bool(int, int)> check_shapes = [&](int k, int remaining) -> bool {
        if (k == s - 1) {
            shape[k] = remaining;
            // count points per elementary interval of this shape
            seen.assign(static_cast<std::size_t>(n), 0);
            for (int i = 0; i < X.n(); ++i) {
                std::int64_t idx = 0;
                for (int c = 0; c < s; ++c) {
                    std::int64_t cells = static_cast<std::int64_t>(std::llround(std::pow(b, shape[c])));
                    auto v = static_cast<std::int64_t>(std::floor(X.points()(i, c) * cells + kBinEps));
                    v = std::min(v, cells - 1);
                    idx = idx * cells + v;
                }
                if (seen[static_cast<std::size_t>(idx)]++) return false;
            }
            return true;
        }
        for (int dk = 0; dk <= remaining; ++dk) {
            shape[k] = dk;
            if (!check_shapes(k + 1, remaining - dk)) return false;
        }
        return true;
    };
    return check_shapes(0, m);
}

// ---------------------------------------------------------------------------
// Geometry

double separation_distance(const Design& X) {
    if (X.n() < 2) throw argument_error("separation distance needs at least two points");
    return X.separation_distance();
}

double fill_distance(const Design& X, int resolution) {
    if (X.n() < 1) throw argument_error("fill distance of an empty design");
    const int d = X.dim();
    NeighborGrid grid(X.points());
    double h = 0.0;
    if (d <= 3) {
        int r = resolution;
        if (r == 0) r = (d <= 2) ? 1024 : 100;
        if (r < 2) throw argument_error("fill distance resolution must be >= 2");
        std::int64_t total = 1;
        for (int k = 0; k < d; ++k) total *= r;
        std::vector<int> c(d, 0);
        Eigen::VectorXd x(d);
        for (std::int64_t idx = 0; idx < total; ++idx) {
            std::int64_t rest = idx;
            for (int k = 0; k < d; ++k) {
                c[k] = static_cast<int>(rest % r);
                rest /= r;
            }
            for (int k = 0; k < d; ++k) x[k] = static_cast<double>(c[k]) / (r - 1);
            h = std::max(h, grid.nearest_distance(x));
        }
    } else {
        // low-discrepancy candidates: a raw digital net with ~1e5 points
        int b = d;
        while (!is_prime(b)) ++b;
        int m = 1;
        while (std::pow(b, m) < 7.0e4) ++m;
        Design cand = generate_net(b, m, d, 0, NetOptions{false});
        for (int i = 0; i < cand.n(); ++i)
            h = std::max(h, grid.nearest_distance(cand.point(i)));
    }
    return h;
}

// ---------------------------------------------------------------------------
// CSV / sidecar

void write_design_csv(const Design& X, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot open " + path + " for writing");
    for (int j = 0; j < X.dim(); ++j) out << (j ? "," : "") << "x" << (j + 1);
    out << "\n";
    char buf[32];
    for (int i = 0; i < X.n(); ++i) {
        for (int j = 0; j < X.dim(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", X.points()(i, j));
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
}

Design read_design_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open design file " + path);
    std::string line;
    if (!std::getline(in, line)) throw format_error(path + ": empty file");
    int d = 1 + static_cast<int>(std::count(line.begin(), line.end(), ','));
    std::vector<double> vals;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int got = 0;
        while (std::getline(ss, cell, ',')) {
            std::size_t pos = 0;
            double v;
            try {
                v = std::stod(cell, &pos);
            } catch (const std::exception&) {
                throw format_error(path + ": line " + std::to_string(lineno) + ": bad number '" +
                                   cell + "'");
            }
            if (pos != cell.size())
                throw format_error(path + ": line " + std::to_string(lineno) + ": bad number '" +
                                   cell + "'");
            vals.push_back(v);
            ++got;
        }
        if (got != d)
            throw format_error(path + ": line " + std::to_string(lineno) + ": expected " +
                               std::to_string(d) + " columns, got " + std::to_string(got));
    }
    if (vals.empty()) throw format_error(path + ": no data rows");
    int n = static_cast<int>(vals.size()) / d;
    Eigen::MatrixXd pts(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) pts(i, j) = vals[static_cast<std::size_t>(i) * d + j];
    return Design(pts);
}

void write_stage_sidecar(const std::vector<int>& sizes, const std::string& path) {
    nlohmann::json j;
    j["stage_sizes"] = sizes;
    std::ofstream out(path);
    if (!out) throw format_error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

std::vector<int> read_stage_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open sidecar " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(path + ": " + e.what());
    }
    if (!j.contains("stage_sizes") || !j["stage_sizes"].is_array())
        throw format_error(path + ": missing stage_sizes array");
    return j["stage_sizes"].get<std::vector<int>>();
}

} // namespace msemu
