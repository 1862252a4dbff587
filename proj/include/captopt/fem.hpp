#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "captopt/error.hpp"
#include "captopt/mesh.hpp"

namespace captopt {

using NodalField = std::vector<double>;
using ElementCoefficient = std::vector<double>;

struct Triplet {
    int row;
    int col;
    double value;
};

/// Square sparse matrix in compressed-row layout. Built from triplets; duplicate
/// entries are accumulated in insertion order so assembly is bit-reproducible.
class SparseMatrix {
public:
    SparseMatrix() = default;

    static SparseMatrix from_triplets(int n, std::vector<Triplet> triplets) {
        SparseMatrix m;
        m.n_ = n;
        std::stable_sort(triplets.begin(), triplets.end(),
                         [](const Triplet& a, const Triplet& b) {
                             return a.row != b.row ? a.row < b.row : a.col < b.col;
                         });
        m.row_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
        for (std::size_t i = 0; i < triplets.size();) {
            std::size_t j = i;
            double sum = 0.0;
            while (j < triplets.size() && triplets[j].row == triplets[i].row &&
                   triplets[j].col == triplets[i].col) {
                sum += triplets[j].value;
                ++j;
            }
            if (triplets[i].row < 0 || triplets[i].row >= n || triplets[i].col < 0 ||
                triplets[i].col >= n)
                throw Error("SparseMatrix: triplet index out of range");
            m.col_.push_back(triplets[i].col);
            m.val_.push_back(sum);
            m.row_ptr_[static_cast<std::size_t>(triplets[i].row) + 1] += 1;
            i = j;
        }
        for (int r = 0; r < n; ++r)
            m.row_ptr_[static_cast<std::size_t>(r) + 1] += m.row_ptr_[static_cast<std::size_t>(r)];
        return m;
    }

    int size() const { return n_; }
    int nnz() const { return static_cast<int>(val_.size()); }

    int row_begin(int r) const { return row_ptr_[static_cast<std::size_t>(r)]; }
    int row_end(int r) const { return row_ptr_[static_cast<std::size_t>(r) + 1]; }
    int col(int k) const { return col_[static_cast<std::size_t>(k)]; }
    double value(int k) const { return val_[static_cast<std::size_t>(k)]; }
    double& value(int k) { return val_[static_cast<std::size_t>(k)]; }

    double coeff(int r, int c) const {
        for (int k = row_begin(r); k < row_end(r); ++k)
            if (col(k) == c)
                return value(k);
        return 0.0;
    }

    std::vector<double> multiply(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != n_)
            throw Error("SparseMatrix::multiply: dimension mismatch");
        std::vector<double> y(static_cast<std::size_t>(n_), 0.0);
        for (int r = 0; r < n_; ++r) {
            double s = 0.0;
            for (int k = row_begin(r); k < row_end(r); ++k)
                s += value(k) * x[static_cast<std::size_t>(col(k))];
            y[static_cast<std::size_t>(r)] = s;
        }
        return y;
    }

    void add_to_diagonal(const std::vector<double>& d) {
        if (static_cast<int>(d.size()) != n_)
            throw Error("SparseMatrix::add_to_diagonal: dimension mismatch");
        for (int r = 0; r < n_; ++r) {
            bool found = false;
            for (int k = row_begin(r); k < row_end(r); ++k) {
                if (col(k) == r) {
                    value(k) += d[static_cast<std::size_t>(r)];
                    found = true;
                    break;
                }
            }
            if (!found)
                throw Error("SparseMatrix::add_to_diagonal: missing diagonal entry");
        }
    }

    void scale(double s) {
        for (auto& v : val_)
            v *= s;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : val_)
            m = std::max(m, std::abs(v));
        return m;
    }

    /// a*A + b*B with merged sparsity; patterns need not match.
    static SparseMatrix axpby(double a, const SparseMatrix& A, double b, const SparseMatrix& B) {
        if (A.size() != B.size())
            throw Error("SparseMatrix::axpby: dimension mismatch");
        std::vector<Triplet> ts;
        ts.reserve(static_cast<std::size_t>(A.nnz() + B.nnz()));
        for (int r = 0; r < A.size(); ++r) {
            for (int k = A.row_begin(r); k < A.row_end(r); ++k)
                ts.push_back({r, A.col(k), a * A.value(k)});
            for (int k = B.row_begin(r); k < B.row_end(r); ++k)
                ts.push_back({r, B.col(k), b * B.value(k)});
        }
        return from_triplets(A.size(), std::move(ts));
    }

private:
    int n_ = 0;
    std::vector<int> row_ptr_{0};
    std::vector<int> col_;
    std::vector<double> val_;
};

struct DirichletBC {
    int index;
    double value;
};

struct LinearSystem {
    SparseMatrix matrix;
    std::vector<double> rhs;
    std::vector<DirichletBC> constraints;
    bool dirichlet_applied = false;
};

/// Symmetric elimination of Dirichlet rows/columns: constrained columns move to
/// the right-hand side, constrained rows become identity rows with rhs equal to
/// the boundary value. Conflicting values at one vertex are an error.
inline LinearSystem apply_dirichlet(LinearSystem sys) {
    const int n = sys.matrix.size();
    std::vector<char> constrained(static_cast<std::size_t>(n), 0);
    std::vector<double> bval(static_cast<std::size_t>(n), 0.0);
    for (const auto& bc : sys.constraints) {
        if (bc.index < 0 || bc.index >= n)
            throw Error("apply_dirichlet: constraint index out of range");
        auto i = static_cast<std::size_t>(bc.index);
        if (constrained[i] && bval[i] != bc.value)
            throw Error("apply_dirichlet: conflicting values at vertex " +
                        std::to_string(bc.index));
        constrained[i] = 1;
        bval[i] = bc.value;
    }
    for (int r = 0; r < n; ++r) {
        if (constrained[static_cast<std::size_t>(r)]) {
            for (int k = sys.matrix.row_begin(r); k < sys.matrix.row_end(r); ++k)
                sys.matrix.value(k) = (sys.matrix.col(k) == r) ? 1.0 : 0.0;
            sys.rhs[static_cast<std::size_t>(r)] = bval[static_cast<std::size_t>(r)];
        } else {
            for (int k = sys.matrix.row_begin(r); k < sys.matrix.row_end(r); ++k) {
                int c = sys.matrix.col(k);
                if (constrained[static_cast<std::size_t>(c)]) {
                    sys.rhs[static_cast<std::size_t>(r)] -=
                        sys.matrix.value(k) * bval[static_cast<std::size_t>(c)];
                    sys.matrix.value(k) = 0.0;
                }
            }
        }
    }
    sys.dirichlet_applied = true;
    return sys;
}

namespace detail {

/// Reverse Cuthill-McKee ordering from the sparsity pattern. Returns perm with
/// perm[new] = old. Deterministic: ties break on vertex index.
inline std::vector<int> reverse_cuthill_mckee(const SparseMatrix& A) {
    const int n = A.size();
    std::vector<int> degree(static_cast<std::size_t>(n), 0);
    for (int r = 0; r < n; ++r)
        degree[static_cast<std::size_t>(r)] = A.row_end(r) - A.row_begin(r);

    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(n));
    std::vector<char> visited(static_cast<std::size_t>(n), 0);
    std::vector<int> nbrs;

    for (;;) {
        int start = -1;
        for (int v = 0; v < n; ++v) {
            if (!visited[static_cast<std::size_t>(v)] &&
                (start < 0 || degree[static_cast<std::size_t>(v)] <
                                  degree[static_cast<std::size_t>(start)]))
                start = v;
        }
        if (start < 0)
            break;
        std::size_t head = order.size();
        order.push_back(start);
        visited[static_cast<std::size_t>(start)] = 1;
        while (head < order.size()) {
            int v = order[head++];
            nbrs.clear();
            for (int k = A.row_begin(v); k < A.row_end(v); ++k) {
                int c = A.col(k);
                if (c != v && !visited[static_cast<std::size_t>(c)])
                    nbrs.push_back(c);
            }
            std::sort(nbrs.begin(), nbrs.end(), [&](int a, int b) {
                return degree[static_cast<std::size_t>(a)] != degree[static_cast<std::size_t>(b)]
                           ? degree[static_cast<std::size_t>(a)] < degree[static_cast<std::size_t>(b)]
                           : a < b;
            });
            for (int c : nbrs) {
                visited[static_cast<std::size_t>(c)] = 1;
                order.push_back(c);
            }
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

} // namespace detail

/// Direct banded LU factorization with partial pivoting, preceded by a reverse
/// Cuthill-McKee reordering. Factor once, solve many times; a single iterative
/// refinement pass against the stored matrix keeps residuals near round-off.
class BandLU {
public:
    explicit BandLU(SparseMatrix A) : A_(std::move(A)) {
        n_ = A_.size();
        perm_ = detail::reverse_cuthill_mckee(A_);
        pos_.assign(static_cast<std::size_t>(n_), 0);
        for (int i = 0; i < n_; ++i)
            pos_[static_cast<std::size_t>(perm_[static_cast<std::size_t>(i)])] = i;

        int bw = 0;
        for (int r = 0; r < n_; ++r)
            for (int k = A_.row_begin(r); k < A_.row_end(r); ++k)
                bw = std::max(bw, std::abs(pos_[static_cast<std::size_t>(r)] -
                                           pos_[static_cast<std::size_t>(A_.col(k))]));
        kl_ = ku_ = bw;
        ldab_ = 2 * kl_ + ku_ + 1;
        ab_.assign(static_cast<std::size_t>(ldab_) * static_cast<std::size_t>(n_), 0.0);
        for (int r = 0; r < n_; ++r) {
            int pi = pos_[static_cast<std::size_t>(r)];
            for (int k = A_.row_begin(r); k < A_.row_end(r); ++k) {
                int pj = pos_[static_cast<std::size_t>(A_.col(k))];
                at(pi, pj) += A_.value(k);
            }
        }
        factor();
    }

    std::vector<double> solve(const std::vector<double>& rhs, int refine_steps = 1) const {
        std::vector<double> x = solve_factored(rhs);
        for (int it = 0; it < refine_steps; ++it) {
            std::vector<double> r = A_.multiply(x);
            for (std::size_t i = 0; i < r.size(); ++i)
                r[i] = rhs[i] - r[i];
            std::vector<double> dx = solve_factored(r);
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] += dx[i];
        }
        return x;
    }

    /// Ratio of largest to smallest pivot magnitude; a cheap conditioning hint.
    double pivot_ratio() const { return pivot_max_ / pivot_min_; }
    int bandwidth() const { return kl_; }

private:
    double& at(int i, int j) {
        return ab_[static_cast<std::size_t>(j) * static_cast<std::size_t>(ldab_) +
                   static_cast<std::size_t>(i - j + kl_ + ku_)];
    }
    double at(int i, int j) const {
        return ab_[static_cast<std::size_t>(j) * static_cast<std::size_t>(ldab_) +
                   static_cast<std::size_t>(i - j + kl_ + ku_)];
    }

    void factor() {
        ipiv_.assign(static_cast<std::size_t>(n_), 0);
        const double tol = 1e-13 * std::max(A_.max_abs(), 1e-300);
        pivot_min_ = std::numeric_limits<double>::infinity();
        pivot_max_ = 0.0;
        for (int j = 0; j < n_; ++j) {
            int ilast = std::min(n_ - 1, j + kl_);
            int p = j;
            for (int i = j + 1; i <= ilast; ++i)
                if (std::abs(at(i, j)) > std::abs(at(p, j)))
                    p = i;
            double piv = at(p, j);
            if (std::abs(piv) < tol)
                throw SolverError("BandLU: vanishing pivot at row " +
                                  std::to_string(perm_[static_cast<std::size_t>(j)]) +
                                  " (|pivot| = " + std::to_string(std::abs(piv)) + ")");
            pivot_min_ = std::min(pivot_min_, std::abs(piv));
            pivot_max_ = std::max(pivot_max_, std::abs(piv));
            ipiv_[static_cast<std::size_t>(j)] = p;
            int clast = std::min(n_ - 1, j + kl_ + ku_);
            if (p != j)
                for (int c = j; c <= clast; ++c)
                    std::swap(at(j, c), at(p, c));
            for (int i = j + 1; i <= ilast; ++i) {
                double l = at(i, j) / at(j, j);
                at(i, j) = l;
                if (l != 0.0)
                    for (int c = j + 1; c <= clast; ++c)
                        at(i, c) -= l * at(j, c);
            }
        }
    }

    std::vector<double> solve_factored(const std::vector<double>& rhs) const {
        std::vector<double> b(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i)
            b[static_cast<std::size_t>(i)] =
                rhs[static_cast<std::size_t>(perm_[static_cast<std::size_t>(i)])];
        for (int j = 0; j < n_; ++j) {
            int p = ipiv_[static_cast<std::size_t>(j)];
            if (p != j)
                std::swap(b[static_cast<std::size_t>(j)], b[static_cast<std::size_t>(p)]);
            int ilast = std::min(n_ - 1, j + kl_);
            for (int i = j + 1; i <= ilast; ++i)
                b[static_cast<std::size_t>(i)] -= at(i, j) * b[static_cast<std::size_t>(j)];
        }
        for (int i = n_ - 1; i >= 0; --i) {
            int clast = std::min(n_ - 1, i + kl_ + ku_);
            double s = b[static_cast<std::size_t>(i)];
            for (int c = i + 1; c <= clast; ++c)
                s -= at(i, c) * b[static_cast<std::size_t>(c)];
            b[static_cast<std::size_t>(i)] = s / at(i, i);
        }
        std::vector<double> x(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i)
            x[static_cast<std::size_t>(perm_[static_cast<std::size_t>(i)])] =
                b[static_cast<std::size_t>(i)];
        return x;
    }

    SparseMatrix A_;
    int n_ = 0, kl_ = 0, ku_ = 0, ldab_ = 0;
    std::vector<int> perm_, pos_, ipiv_;
    std::vector<double> ab_;
    double pivot_min_ = 0.0, pivot_max_ = 0.0;
};

/// Applies outstanding Dirichlet constraints and solves by direct banded LU.
inline std::vector<double> solve_linear(LinearSystem sys) {
    if (!sys.dirichlet_applied && !sys.constraints.empty())
        sys = apply_dirichlet(std::move(sys));
    BandLU lu(sys.matrix);
    return lu.solve(sys.rhs);
}

// ---------------------------------------------------------------------------
// P1 assembly

/// Stiffness with one coefficient per element:
/// (a,b) -> sum_K coeff_K |K| grad(lambda_a) . grad(lambda_b).
inline SparseMatrix assemble_weighted_stiffness(const TriangleMesh& mesh,
                                                const ElementCoefficient& coeff) {
    if (static_cast<int>(coeff.size()) != mesh.num_triangles())
        throw Error("assemble_weighted_stiffness: coefficient length != element count");
    std::vector<Triplet> ts;
    ts.reserve(static_cast<std::size_t>(9 * mesh.num_triangles()));
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        double ck = coeff[static_cast<std::size_t>(k)];
        if (!std::isfinite(ck))
            throw Error("assemble_weighted_stiffness: nonfinite coefficient on element " +
                        std::to_string(k));
        ElementGeometry g = element_geometry(mesh, k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                ts.push_back({t[a], t[b], ck * g.area * dot(g.grad[a], g.grad[b])});
    }
    return SparseMatrix::from_triplets(mesh.num_vertices(), std::move(ts));
}

/// Consistent P1 mass matrix, local block |K|/12 * (1 + [a==b]).
inline SparseMatrix assemble_mass(const TriangleMesh& mesh) {
    std::vector<Triplet> ts;
    ts.reserve(static_cast<std::size_t>(9 * mesh.num_triangles()));
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        double area = mesh.signed_area(k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                ts.push_back({t[a], t[b], area / 12.0 * (a == b ? 2.0 : 1.0)});
    }
    return SparseMatrix::from_triplets(mesh.num_vertices(), std::move(ts));
}

/// Load vector b_a = integral of the P1 interpolant of `density` against
/// lambda_a; exact for P1 densities (mass matrix times nodal values).
inline std::vector<double> assemble_load(const TriangleMesh& mesh, const NodalField& density) {
    if (static_cast<int>(density.size()) != mesh.num_vertices())
        throw Error("assemble_load: density size != vertex count");
    std::vector<double> b(static_cast<std::size_t>(mesh.num_vertices()), 0.0);
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        double area = mesh.signed_area(k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        for (int a = 0; a < 3; ++a) {
            double s = 0.0;
            for (int bb = 0; bb < 3; ++bb)
                s += area / 12.0 * (a == bb ? 2.0 : 1.0) *
                     density[static_cast<std::size_t>(t[bb])];
            b[static_cast<std::size_t>(t[a])] += s;
        }
    }
    return b;
}

/// integral of lambda_a over the mesh (= assemble_load with density 1).
inline std::vector<double> unit_load(const TriangleMesh& mesh) {
    std::vector<double> b(static_cast<std::size_t>(mesh.num_vertices()), 0.0);
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        double w = mesh.signed_area(k) / 3.0;
        for (int a : mesh.triangles[static_cast<std::size_t>(k)])
            b[static_cast<std::size_t>(a)] += w;
    }
    return b;
}

/// Exact integral of the P1 interpolant of `field` over the mesh.
inline double integrate_nodal(const TriangleMesh& mesh, const NodalField& field) {
    if (static_cast<int>(field.size()) != mesh.num_vertices())
        throw Error("integrate_nodal: field size != vertex count");
    double s = 0.0;
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        double w = mesh.signed_area(k) / 3.0;
        for (int a : mesh.triangles[static_cast<std::size_t>(k)])
            s += w * field[static_cast<std::size_t>(a)];
    }
    return s;
}

/// Gradient of the P1 interpolant of `field` on element k (constant per element).
inline Vec2 element_gradient(const TriangleMesh& mesh, const ElementGeometry& g, int k,
                             const NodalField& field) {
    const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
    Vec2 r{0.0, 0.0};
    for (int a = 0; a < 3; ++a) {
        double f = field[static_cast<std::size_t>(t[a])];
        r.x += f * g.grad[a].x;
        r.y += f * g.grad[a].y;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Inverse-average coefficient

namespace detail {

// Mean over the reference triangle of exp(v . lambda) for nodal values v,
// i.e. twice the second divided difference of exp at (v0, v1, v2).
// Three regimes: a degree-5 Gauss rule for nearly constant exponents, a
// complete-homogeneous series for moderate spread, and expm1-based divided
// differences for large spread. Relative error stays below ~1e-14 throughout.
inline double mean_exp_reference(double v0, double v1, double v2) {
    double vmin = std::min({v0, v1, v2});
    double vmax = std::max({v0, v1, v2});
    double spread = vmax - vmin;

    if (spread > 700.0)
        throw Error("inverse average: exponent spread " + std::to_string(spread) +
                    " would overflow");

    if (spread < 1e-6) {
        // 7-point degree-5 rule; for spreads this small it is exact to round-off.
        static const double w[7] = {0.225,
                                    0.132394152788506, 0.132394152788506, 0.132394152788506,
                                    0.125939180544827, 0.125939180544827, 0.125939180544827};
        static const double l1[7] = {1.0 / 3.0,
                                     0.059715871789770, 0.470142064105115, 0.470142064105115,
                                     0.797426985353087, 0.101286507323456, 0.101286507323456};
        static const double l2[7] = {1.0 / 3.0,
                                     0.470142064105115, 0.059715871789770, 0.470142064105115,
                                     0.101286507323456, 0.797426985353087, 0.101286507323456};
        double vbar = (v0 + v1 + v2) / 3.0;
        double s = 0.0;
        for (int q = 0; q < 7; ++q) {
            double lam1 = l1[q], lam2 = l2[q], lam0 = 1.0 - lam1 - lam2;
            s += w[q] * std::exp(lam0 * (v0 - vbar) + lam1 * (v1 - vbar) + lam2 * (v2 - vbar));
        }
        return s * std::exp(vbar);
    }

    if (spread <= 1.0) {
        // 2 exp[v0,v1,v2] = 2 e^{vbar} sum_m h_m(d) / (m+2)! with d centered
        // (sum d_i = 0, so e1 = 0), via the recurrence h_m = -e2 h_{m-2} + e3 h_{m-3}.
        double vbar = (v0 + v1 + v2) / 3.0;
        double d0 = v0 - vbar, d1 = v1 - vbar, d2 = v2 - vbar;
        double e2 = d0 * d1 + d1 * d2 + d0 * d2;
        double e3 = d0 * d1 * d2;
        double hm1 = 0.0;       // h_{m-1}, starts as h_1 = e1 = 0
        double hm2 = 1.0;       // h_{m-2}, starts as h_0 = 1
        double hm3 = 0.0;       // h_{m-3}, starts as h_{-1} = 0
        double factorial = 6.0; // (1+2)!
        double sum = 0.5;       // m = 0 and m = 1 terms (h_1 = 0)
        for (int m = 2; m <= 40; ++m) {
            double hm = -e2 * hm2 + e3 * hm3;
            factorial *= (m + 2);
            sum += hm / factorial;
            hm3 = hm2;
            hm2 = hm1;
            hm1 = hm;
        }
        return 2.0 * std::exp(vbar) * sum;
    }

    // Large spread: sorted divided differences with expm1 first differences.
    double s0 = v0, s1 = v1, s2 = v2;
    if (s0 > s1) std::swap(s0, s1);
    if (s1 > s2) std::swap(s1, s2);
    if (s0 > s1) std::swap(s0, s1);
    auto phi = [](double t) { return t == 0.0 ? 1.0 : std::expm1(t) / t; };
    // 2 exp[s0,s1,s2] = 2 e^{s1} (phi(s2-s1) - e^{s0-s1} phi(s1-s0)) / (s2-s0)
    double num = phi(s2 - s1) - std::exp(s0 - s1) * phi(s1 - s0);
    return 2.0 * std::exp(s1) * num / (s2 - s0);
}

/// Third divided difference of exp at four (possibly repeated) points.
inline double exp_dd3(double x0, double x1, double x2, double x3) {
    double lo = std::min(std::min(x0, x1), std::min(x2, x3));
    double hi = std::max(std::max(x0, x1), std::max(x2, x3));
    double spread = hi - lo;
    if (spread > 700.0)
        throw Error("exp_dd3: exponent spread " + std::to_string(spread) + " would overflow");

    if (spread <= 1.0) {
        // e^{xbar} sum_m h_m(d) / (m+3)! with centered d (e1 = 0):
        // h_m = -e2 h_{m-2} + e3 h_{m-3} - e4 h_{m-4}
        double xbar = 0.25 * (x0 + x1 + x2 + x3);
        double d0 = x0 - xbar, d1 = x1 - xbar, d2 = x2 - xbar, d3 = x3 - xbar;
        double e2 = d0 * d1 + d0 * d2 + d0 * d3 + d1 * d2 + d1 * d3 + d2 * d3;
        double e3 = d0 * d1 * d2 + d0 * d1 * d3 + d0 * d2 * d3 + d1 * d2 * d3;
        double e4 = d0 * d1 * d2 * d3;
        double hm1 = 0.0;        // h_1 = e1 = 0
        double hm2 = 1.0;        // h_0
        double hm3 = 0.0;        // h_{-1}
        double hm4 = 0.0;        // h_{-2}
        double factorial = 24.0; // (1+3)!
        double sum = 1.0 / 6.0;  // m = 0 and m = 1 terms
        for (int m = 2; m <= 40; ++m) {
            double hm = -e2 * hm2 + e3 * hm3 - e4 * hm4;
            factorial *= (m + 3);
            sum += hm / factorial;
            hm4 = hm3;
            hm3 = hm2;
            hm2 = hm1;
            hm1 = hm;
        }
        return std::exp(xbar) * sum;
    }

    // exp[s0..s3] = (exp[s1,s2,s3] - exp[s0,s1,s2]) / (s3 - s0) on sorted points
    double s[4] = {x0, x1, x2, x3};
    std::sort(s, s + 4);
    double upper = 0.5 * mean_exp_reference(s[1], s[2], s[3]);
    double lower = 0.5 * mean_exp_reference(s[0], s[1], s[2]);
    return (upper - lower) / (s[3] - s[0]);
}

} // namespace detail

/// E_K together with its derivatives with respect to the three nodal exponent
/// values of element K: dE/du_v = 2 exp[w0,w1,w2,w_v] / m^2 with w = -u and
/// m the mean of exp(-u_h) over K. Used by the discrete adjoint.
struct InverseAverageDerivative {
    ElementCoefficient value;                    // E_K
    std::vector<std::array<double, 3>> d_du;     // dE_K / du at local vertices
};

inline InverseAverageDerivative
elementwise_inverse_average_with_derivative(const TriangleMesh& mesh,
                                            const NodalField& exponent) {
    if (static_cast<int>(exponent.size()) != mesh.num_vertices())
        throw Error("elementwise_inverse_average_with_derivative: field size != vertex count");
    InverseAverageDerivative out;
    out.value.resize(static_cast<std::size_t>(mesh.num_triangles()));
    out.d_du.resize(static_cast<std::size_t>(mesh.num_triangles()));
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        double w0 = -exponent[static_cast<std::size_t>(t[0])];
        double w1 = -exponent[static_cast<std::size_t>(t[1])];
        double w2 = -exponent[static_cast<std::size_t>(t[2])];
        double m = detail::mean_exp_reference(w0, w1, w2);
        double ek = 1.0 / m;
        if (!std::isfinite(ek) || !(ek > 0.0))
            throw Error("elementwise_inverse_average_with_derivative: overflow on element " +
                        std::to_string(k));
        out.value[static_cast<std::size_t>(k)] = ek;
        double inv_m2 = ek * ek;
        out.d_du[static_cast<std::size_t>(k)] = {
            2.0 * detail::exp_dd3(w0, w1, w2, w0) * inv_m2,
            2.0 * detail::exp_dd3(w0, w1, w2, w1) * inv_m2,
            2.0 * detail::exp_dd3(w0, w1, w2, w2) * inv_m2};
    }
    return out;
}

/// E_K = (mean over K of exp(-u_h))^{-1} for the P1 interpolant u_h of
/// `exponent`; the harmonic-type average that stabilizes the drift terms.
inline ElementCoefficient elementwise_inverse_average(const TriangleMesh& mesh,
                                                      const NodalField& exponent) {
    if (static_cast<int>(exponent.size()) != mesh.num_vertices())
        throw Error("elementwise_inverse_average: field size != vertex count");
    ElementCoefficient e(static_cast<std::size_t>(mesh.num_triangles()));
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        double u0 = exponent[static_cast<std::size_t>(t[0])];
        double u1 = exponent[static_cast<std::size_t>(t[1])];
        double u2 = exponent[static_cast<std::size_t>(t[2])];
        if (!std::isfinite(u0) || !std::isfinite(u1) || !std::isfinite(u2))
            throw Error("elementwise_inverse_average: nonfinite exponent on element " +
                        std::to_string(k));
        double mean = detail::mean_exp_reference(-u0, -u1, -u2);
        double ek = 1.0 / mean;
        if (!std::isfinite(ek) || !(ek > 0.0))
            throw Error("elementwise_inverse_average: overflow on element " + std::to_string(k));
        e[static_cast<std::size_t>(k)] = ek;
    }
    return e;
}

} // namespace captopt
