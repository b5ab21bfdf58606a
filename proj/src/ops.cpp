#include "rbnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace rbnet {
namespace ops {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

std::vector<int64_t> strides_of(const std::vector<int>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = int(shape.size()) - 2; i >= 0; --i) st[size_t(i)] = st[size_t(i) + 1] * shape[size_t(i) + 1];
    return st;
}

// Unary elementwise op with pointwise derivative computed from (x, y).
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd f, Bwd dfdx) {
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.data();
    float* op = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = f(xp[i]);
    if (tape_should_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        GradTape::active()->record([xc, oc, dfdx]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const float* xp2 = xc.data();
            const float* yp2 = oc.data();
            float* dx = xc.ensure_grad();
            const int64_t m = xc.numel();
            for (int64_t i = 0; i < m; ++i) dx[i] += g[i] * dfdx(xp2[i], yp2[i]);
        });
    }
    return out;
}

}  // namespace

// --------------------------------------------------------------------------
// Elementwise
// --------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const float* ap = a.data();
    const float* bp = b.data();
    float* op = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    if (tape_should_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const int64_t m = oc.numel();
            if (ac.requires_grad()) {
                float* da = ac.ensure_grad();
                for (int64_t i = 0; i < m; ++i) da[i] += g[i];
            }
            if (bc.requires_grad()) {
                float* db = bc.ensure_grad();
                for (int64_t i = 0; i < m; ++i) db[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const float* ap = a.data();
    const float* bp = b.data();
    float* op = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
    if (tape_should_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const int64_t m = oc.numel();
            if (ac.requires_grad()) {
                float* da = ac.ensure_grad();
                for (int64_t i = 0; i < m; ++i) da[i] += g[i];
            }
            if (bc.requires_grad()) {
                float* db = bc.ensure_grad();
                for (int64_t i = 0; i < m; ++i) db[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const float* ap = a.data();
    const float* bp = b.data();
    float* op = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    if (tape_should_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const float* ap2 = ac.data();
            const float* bp2 = bc.data();
            const int64_t m = oc.numel();
            if (ac.requires_grad()) {
                float* da = ac.ensure_grad();
                for (int64_t i = 0; i < m; ++i) da[i] += g[i] * bp2[i];
            }
            if (bc.requires_grad()) {
                float* db = bc.ensure_grad();
                for (int64_t i = 0; i < m; ++i) db[i] += g[i] * ap2[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const float* ap = a.data();
    float* op = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * s;
    if (tape_should_record({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        GradTape::active()->record([ac, oc, s]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            float* da = ac.ensure_grad();
            const int64_t m = oc.numel();
            for (int64_t i = 0; i < m; ++i) da[i] += g[i] * s;
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

namespace {
constexpr float kInvSqrt2 = 0.7071067811865476f;
constexpr float kInvSqrt2Pi = 0.3989422804014327f;
}  // namespace

Tensor gelu(const Tensor& x) {
    return unary_op(
        x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); },
        [](float v, float) {
            float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
            float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
            return cdf + v * pdf;
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x,
        [](float v) {
            // split on sign for stability
            if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
            float e = std::exp(v);
            return e / (1.0f + e);
        },
        [](float, float y) { return y * (1.0f - y); });
}

// --------------------------------------------------------------------------
// Shape plumbing
// --------------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    Tensor out = Tensor::from(std::move(shape), x.vec());
    if (tape_should_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        GradTape::active()->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            float* dx = xc.ensure_grad();
            const int64_t m = oc.numel();
            for (int64_t i = 0; i < m; ++i) dx[i] += g[i];
        });
    }
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const auto& ish = x.shape();
    if (perm.size() != ish.size()) throw DimensionError("permute: rank mismatch");
    std::vector<int> osh(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) osh[i] = ish[size_t(perm[i])];
    Tensor out = Tensor::zeros(osh);
    const auto ist = strides_of(ish);
    const auto ost = strides_of(osh);
    const int nd = int(ish.size());
    const float* xp = x.data();
    float* op = out.data();
    const int64_t n = x.numel();
    std::vector<int64_t> map_strides(static_cast<size_t>(nd));  // input stride per output axis
    for (int i = 0; i < nd; ++i) map_strides[size_t(i)] = ist[size_t(perm[size_t(i)])];
    for (int64_t o = 0; o < n; ++o) {
        int64_t rem = o, src = 0;
        for (int i = 0; i < nd; ++i) {
            int64_t c = rem / ost[size_t(i)];
            rem -= c * ost[size_t(i)];
            src += c * map_strides[size_t(i)];
        }
        op[o] = xp[src];
    }
    if (tape_should_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        std::vector<int64_t> ms = map_strides;
        std::vector<int64_t> ostc = ost;
        GradTape::active()->record([xc, oc, ms, ostc, nd]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            float* dx = xc.ensure_grad();
            const int64_t m = oc.numel();
            for (int64_t o = 0; o < m; ++o) {
                int64_t rem = o, src = 0;
                for (int i = 0; i < nd; ++i) {
                    int64_t c = rem / ostc[size_t(i)];
                    rem -= c * ostc[size_t(i)];
                    src += c * ms[size_t(i)];
                }
                dx[src] += g[o];
            }
        });
    }
    return out;
}

Tensor bias_add_lastdim(const Tensor& x, const Tensor& bias) {
    const int c = x.dim(x.ndim() - 1);
    if (bias.ndim() != 1 || bias.dim(0) != c)
        throw DimensionError("bias_add_lastdim: bias shape " + shape_str(bias.shape()) +
                             " does not match last extent " + std::to_string(c));
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.data();
    const float* bp = bias.data();
    float* op = out.data();
    const int64_t rows = x.numel() / c;
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) op[r * c + j] = xp[r * c + j] + bp[j];
    if (tape_should_record({&x, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, bc = bias, oc = out;
        GradTape::active()->record([xc, bc, oc, rows, c]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            if (xc.requires_grad()) {
                float* dx = xc.ensure_grad();
                const int64_t m = oc.numel();
                for (int64_t i = 0; i < m; ++i) dx[i] += g[i];
            }
            if (bc.requires_grad()) {
                float* db = bc.ensure_grad();
                for (int j = 0; j < c; ++j) {
                    double acc = 0.0;
                    for (int64_t r = 0; r < rows; ++r) acc += g[r * c + j];
                    db[j] += float(acc);
                }
            }
        });
    }
    return out;
}

Tensor expand_batch(const Tensor& x, int n) {
    if (n < 1) throw DimensionError("expand_batch: n must be >= 1");
    std::vector<int> osh;
    osh.push_back(n);
    for (int d : x.shape()) osh.push_back(d);
    Tensor out = Tensor::zeros(osh);
    const int64_t m = x.numel();
    const float* xp = x.data();
    float* op = out.data();
    for (int b = 0; b < n; ++b) std::memcpy(op + int64_t(b) * m, xp, size_t(m) * 4);
    if (tape_should_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        GradTape::active()->record([xc, oc, n, m]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            float* dx = xc.ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (int b = 0; b < n; ++b) acc += g[int64_t(b) * m + i];
                dx[i] += float(acc);
            }
        });
    }
    return out;
}

// --------------------------------------------------------------------------
// concat / split
// --------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw DimensionError("concat: no inputs");
    const auto& ref = xs[0].shape();
    const int nd = int(ref.size());
    if (axis < 0 || axis >= nd) throw DimensionError("concat: axis out of range");
    int total = 0;
    for (const auto& t : xs) {
        if (t.ndim() != nd) throw DimensionError("concat: rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != axis && t.dim(i) != ref[size_t(i)])
                throw DimensionError("concat: extent mismatch at axis " + std::to_string(i) +
                                     ": " + shape_str(t.shape()) + " vs " + shape_str(ref));
        total += t.dim(axis);
    }
    std::vector<int> osh = ref;
    osh[size_t(axis)] = total;
    Tensor out = Tensor::zeros(osh);

    // outer: product of extents before axis; inner: product after axis
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= ref[size_t(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= ref[size_t(i)];

    float* op = out.data();
    const int64_t out_row = int64_t(total) * inner;
    int64_t off = 0;
    for (const auto& t : xs) {
        const int64_t chunk = int64_t(t.dim(axis)) * inner;
        const float* tp = t.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(op + o * out_row + off, tp + o * chunk, size_t(chunk) * 4);
        off += chunk;
    }

    bool rec = false;
    {
        std::vector<const Tensor*> ptrs;
        for (const auto& t : xs) ptrs.push_back(&t);
        if (GradTape::active())
            for (auto* p : ptrs)
                if (p->requires_grad()) rec = true;
    }
    if (rec) {
        out.set_requires_grad(true);
        std::vector<Tensor> xc = xs;
        Tensor oc = out;
        GradTape::active()->record([xc, oc, outer, inner, out_row]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            int64_t off2 = 0;
            for (auto& t : xc) {
                const int64_t chunk = t.numel() / (outer == 0 ? 1 : outer);
                if (t.requires_grad()) {
                    float* dt = t.ensure_grad();
                    for (int64_t o = 0; o < outer; ++o) {
                        const float* gs = g + o * out_row + off2;
                        float* dd = dt + o * chunk;
                        for (int64_t i = 0; i < chunk; ++i) dd[i] += gs[i];
                    }
                }
                off2 += chunk;
            }
        });
    }
    return out;
}

std::vector<Tensor> split(const Tensor& x, const std::vector<int>& sizes, int axis) {
    const auto& ish = x.shape();
    const int nd = int(ish.size());
    if (axis < 0 || axis >= nd) throw DimensionError("split: axis out of range");
    int total = 0;
    for (int s : sizes) total += s;
    if (total != ish[size_t(axis)])
        throw DimensionError("split: sizes sum " + std::to_string(total) +
                             " != extent " + std::to_string(ish[size_t(axis)]));

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= ish[size_t(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= ish[size_t(i)];
    const int64_t in_row = int64_t(ish[size_t(axis)]) * inner;

    std::vector<Tensor> outs;
    const float* xp = x.data();
    int64_t off = 0;
    for (int s : sizes) {
        std::vector<int> osh = ish;
        osh[size_t(axis)] = s;
        Tensor out = Tensor::zeros(osh);
        const int64_t chunk = int64_t(s) * inner;
        float* op = out.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(op + o * chunk, xp + o * in_row + off, size_t(chunk) * 4);
        off += chunk;
        outs.push_back(out);
    }

    if (tape_should_record({&x})) {
        for (auto& o : outs) o.set_requires_grad(true);
        Tensor xc = x;
        std::vector<Tensor> oc = outs;
        GradTape::active()->record([xc, oc, outer, inner, in_row]() mutable {
            float* dx = nullptr;
            int64_t off2 = 0;
            for (auto& o : oc) {
                const int64_t chunk = o.numel() / (outer == 0 ? 1 : outer);
                if (o.has_grad()) {
                    if (!dx) dx = xc.ensure_grad();
                    const float* g = o.grad();
                    for (int64_t ou = 0; ou < outer; ++ou) {
                        float* dd = dx + ou * in_row + off2;
                        const float* gs = g + ou * chunk;
                        for (int64_t i = 0; i < chunk; ++i) dd[i] += gs[i];
                    }
                }
                off2 += chunk;
            }
        });
    }
    return outs;
}

// --------------------------------------------------------------------------
// Reductions
// --------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const float* xp = x.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += xp[i];
    Tensor out = Tensor::scalar(float(acc));
    if (tape_should_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        GradTape::active()->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const float g = oc.grad()[0];
            float* dx = xc.ensure_grad();
            const int64_t m = xc.numel();
            for (int64_t i = 0; i < m; ++i) dx[i] += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    const int64_t n = x.numel();
    if (n == 0) throw DimensionError("mean of empty tensor");
    double acc = 0.0;
    const float* xp = x.data();
    for (int64_t i = 0; i < n; ++i) acc += xp[i];
    Tensor out = Tensor::scalar(float(acc / double(n)));
    if (tape_should_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        GradTape::active()->record([xc, oc, n]() mutable {
            if (!oc.has_grad()) return;
            const float g = oc.grad()[0] / float(n);
            float* dx = xc.ensure_grad();
            for (int64_t i = 0; i < n; ++i) dx[i] += g;
        });
    }
    return out;
}

// --------------------------------------------------------------------------
// matmul
// --------------------------------------------------------------------------

namespace {

struct MatmulDims {
    int64_t batch_a, batch_b, batch;  // leading extents folded
    int m, k, n;
    std::vector<int> out_shape;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw DimensionError("matmul: operands must have rank >= 2");
    MatmulDims d;
    d.m = a.dim(a.ndim() - 2);
    d.k = a.dim(a.ndim() - 1);
    const int kb = b.dim(b.ndim() - 2);
    d.n = b.dim(b.ndim() - 1);
    if (d.k != kb)
        throw DimensionError("matmul: inner extents disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    std::vector<int> la(a.shape().begin(), a.shape().end() - 2);
    std::vector<int> lb(b.shape().begin(), b.shape().end() - 2);
    if (!la.empty() && !lb.empty() && la != lb)
        throw DimensionError("matmul: batch extents disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    d.batch_a = shape_numel(la);
    d.batch_b = shape_numel(lb);
    d.batch = std::max(d.batch_a, d.batch_b);
    const std::vector<int>& lead = la.empty() ? lb : la;
    d.out_shape = lead;
    d.out_shape.push_back(d.m);
    d.out_shape.push_back(d.n);
    return d;
}

// out[m,n] += A[m,k] * B[k,n], accumulating row-wise (ikj order).
void gemm_acc(const float* A, const float* B, float* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = A + int64_t(i) * k;
        float* orow = out + int64_t(i) * n;
        for (int l = 0; l < k; ++l) {
            const float av = arow[l];
            if (av == 0.0f) continue;
            const float* brow = B + int64_t(l) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// dA[m,k] += G[m,n] * B[k,n]^T  (row-by-row dot products)
void gemm_acc_bt(const float* G, const float* B, float* dA, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* grow = G + int64_t(i) * n;
        float* darow = dA + int64_t(i) * k;
        for (int l = 0; l < k; ++l) {
            const float* brow = B + int64_t(l) * n;
            float acc = 0.0f;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            darow[l] += acc;
        }
    }
}

// dB[k,n] += A[m,k]^T * G[m,n]
void gemm_acc_at(const float* A, const float* G, float* dB, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = A + int64_t(i) * k;
        const float* grow = G + int64_t(i) * n;
        for (int l = 0; l < k; ++l) {
            const float av = arow[l];
            if (av == 0.0f) continue;
            float* dbrow = dB + int64_t(l) * n;
            for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatmulDims d = matmul_dims(a, b);
    Tensor out = Tensor::zeros(d.out_shape);
    const float* ap = a.data();
    const float* bp = b.data();
    float* op = out.data();
    const int64_t a_step = d.batch_a == 1 ? 0 : int64_t(d.m) * d.k;
    const int64_t b_step = d.batch_b == 1 ? 0 : int64_t(d.k) * d.n;
    for (int64_t bt = 0; bt < d.batch; ++bt)
        gemm_acc(ap + bt * a_step, bp + bt * b_step, op + bt * int64_t(d.m) * d.n, d.m, d.k, d.n);

    if (tape_should_record({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record([ac, bc, oc, d, a_step, b_step]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const int64_t o_step = int64_t(d.m) * d.n;
            if (ac.requires_grad()) {
                float* da = ac.ensure_grad();
                const float* bp2 = bc.data();
                for (int64_t bt = 0; bt < d.batch; ++bt)
                    gemm_acc_bt(g + bt * o_step, bp2 + bt * b_step, da + bt * a_step, d.m, d.k, d.n);
            }
            if (bc.requires_grad()) {
                float* db = bc.ensure_grad();
                const float* ap2 = ac.data();
                for (int64_t bt = 0; bt < d.batch; ++bt)
                    gemm_acc_at(ap2 + bt * a_step, g + bt * o_step, db + bt * b_step, d.m, d.k, d.n);
            }
        });
    }
    return out;
}

// --------------------------------------------------------------------------
// Convolutions
// --------------------------------------------------------------------------

namespace {

struct ConvDims {
    int N, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding, bool depthwise) {
    if (x.ndim() != 4) throw DimensionError("conv2d: input must be (N,C,H,W)");
    if (w.ndim() != 4) throw DimensionError("conv2d: weight must be 4-D");
    ConvDims d;
    d.N = x.dim(0);
    d.Cin = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = padding;
    if (depthwise) {
        if (w.dim(0) != d.Cin || w.dim(1) != 1)
            throw DimensionError("depthwise_conv2d: weight " + shape_str(w.shape()) +
                                 " does not match channels " + std::to_string(d.Cin));
        d.Cout = d.Cin;
    } else {
        if (w.dim(1) != d.Cin)
            throw DimensionError("conv2d: weight channels " + std::to_string(w.dim(1)) +
                                 " != input channels " + std::to_string(d.Cin));
        d.Cout = w.dim(0);
    }
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (d.kh > d.H + 2 * padding || d.kw > d.W + 2 * padding)
        throw DimensionError("conv2d: kernel larger than padded input");
    const int hnum = d.H + 2 * padding - d.kh;
    const int wnum = d.W + 2 * padding - d.kw;
    if (hnum % stride != 0 || wnum % stride != 0)
        throw ConfigError("conv2d: output extent not integral for H=" + std::to_string(d.H) +
                          " k=" + std::to_string(d.kh) + " stride=" + std::to_string(stride) +
                          " pad=" + std::to_string(padding));
    d.Ho = hnum / stride + 1;
    d.Wo = wnum / stride + 1;
    return d;
}

void conv_forward(const ConvDims& d, const float* xp, const float* wp, const float* bp, float* op,
                  bool depthwise) {
    const int64_t x_n = int64_t(d.Cin) * d.H * d.W;
    const int64_t o_n = int64_t(d.Cout) * d.Ho * d.Wo;
    for (int n = 0; n < d.N; ++n) {
        for (int co = 0; co < d.Cout; ++co) {
            float* oplane = op + n * o_n + int64_t(co) * d.Ho * d.Wo;
            const float bval = bp ? bp[co] : 0.0f;
            for (int64_t i = 0; i < int64_t(d.Ho) * d.Wo; ++i) oplane[i] = bval;
            const int ci_lo = depthwise ? co : 0;
            const int ci_hi = depthwise ? co + 1 : d.Cin;
            for (int ci = ci_lo; ci < ci_hi; ++ci) {
                const float* xplane = xp + n * x_n + int64_t(ci) * d.H * d.W;
                const float* wk = depthwise ? wp + int64_t(co) * d.kh * d.kw
                                            : wp + (int64_t(co) * d.Cin + ci) * d.kh * d.kw;
                for (int ky = 0; ky < d.kh; ++ky) {
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const float wv = wk[ky * d.kw + kx];
                        if (wv == 0.0f) continue;
                        for (int oy = 0; oy < d.Ho; ++oy) {
                            const int iy = oy * d.stride - d.pad + ky;
                            if (iy < 0 || iy >= d.H) continue;
                            // valid ox range so that 0 <= ox*stride - pad + kx < W
                            int ox_lo = 0;
                            while (ox_lo * d.stride - d.pad + kx < 0) ++ox_lo;
                            int ox_hi = d.Wo;
                            while (ox_hi > 0 && (ox_hi - 1) * d.stride - d.pad + kx >= d.W) --ox_hi;
                            const float* xrow = xplane + int64_t(iy) * d.W;
                            float* orow = oplane + int64_t(oy) * d.Wo;
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                orow[ox] += wv * xrow[ox * d.stride - d.pad + kx];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const ConvDims& d, const Tensor& x, const Tensor& w, Tensor& xc, Tensor& wc,
                   Tensor& bc, const float* g, bool depthwise, bool has_bias) {
    const int64_t x_n = int64_t(d.Cin) * d.H * d.W;
    const int64_t o_n = int64_t(d.Cout) * d.Ho * d.Wo;
    float* dx = xc.requires_grad() ? xc.ensure_grad() : nullptr;
    float* dw = wc.requires_grad() ? wc.ensure_grad() : nullptr;
    float* db = (has_bias && bc.defined() && bc.requires_grad()) ? bc.ensure_grad() : nullptr;
    const float* xp = x.data();
    const float* wp = w.data();

    if (db) {
        for (int co = 0; co < d.Cout; ++co) {
            double acc = 0.0;
            for (int n = 0; n < d.N; ++n) {
                const float* gp = g + n * o_n + int64_t(co) * d.Ho * d.Wo;
                for (int64_t i = 0; i < int64_t(d.Ho) * d.Wo; ++i) acc += gp[i];
            }
            db[co] += float(acc);
        }
    }

    for (int n = 0; n < d.N; ++n) {
        for (int co = 0; co < d.Cout; ++co) {
            const float* gplane = g + n * o_n + int64_t(co) * d.Ho * d.Wo;
            const int ci_lo = depthwise ? co : 0;
            const int ci_hi = depthwise ? co + 1 : d.Cin;
            for (int ci = ci_lo; ci < ci_hi; ++ci) {
                const float* xplane = xp + n * x_n + int64_t(ci) * d.H * d.W;
                const int64_t wk_off = depthwise ? int64_t(co) * d.kh * d.kw
                                                 : (int64_t(co) * d.Cin + ci) * d.kh * d.kw;
                for (int ky = 0; ky < d.kh; ++ky) {
                    for (int kx = 0; kx < d.kw; ++kx) {
                        int ox_lo = 0;
                        while (ox_lo * d.stride - d.pad + kx < 0) ++ox_lo;
                        int ox_hi = d.Wo;
                        while (ox_hi > 0 && (ox_hi - 1) * d.stride - d.pad + kx >= d.W) --ox_hi;
                        float wacc = 0.0f;
                        const float wv = wp[wk_off + ky * d.kw + kx];
                        for (int oy = 0; oy < d.Ho; ++oy) {
                            const int iy = oy * d.stride - d.pad + ky;
                            if (iy < 0 || iy >= d.H) continue;
                            const float* xrow = xplane + int64_t(iy) * d.W;
                            const float* grow = gplane + int64_t(oy) * d.Wo;
                            if (dw) {
                                float acc = 0.0f;
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    acc += xrow[ox * d.stride - d.pad + kx] * grow[ox];
                                wacc += acc;
                            }
                            if (dx) {
                                float* dxrow = xc.grad() + (n * x_n + int64_t(ci) * d.H * d.W) +
                                               int64_t(iy) * d.W;
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    dxrow[ox * d.stride - d.pad + kx] += wv * grow[ox];
                            }
                        }
                        if (dw) dw[wk_off + ky * d.kw + kx] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    const ConvDims d = conv_dims(x, w, stride, padding, false);
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.Cout))
        throw DimensionError("conv2d: bias shape mismatch");
    Tensor out = Tensor::zeros({d.N, d.Cout, d.Ho, d.Wo});
    conv_forward(d, x.data(), w.data(), bias.defined() ? bias.data() : nullptr, out.data(), false);
    const Tensor* bptr = bias.defined() ? &bias : nullptr;
    if (tape_should_record({&x, &w, bptr})) {
        out.set_requires_grad(true);
        Tensor xc = x, wc = w, bc = bias, oc = out;
        const bool has_bias = bias.defined();
        GradTape::active()->record([xc, wc, bc, oc, d, has_bias]() mutable {
            if (!oc.has_grad()) return;
            conv_backward(d, xc, wc, xc, wc, bc, oc.grad(), false, has_bias);
        });
    }
    return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.ndim() != 4) throw DimensionError("depthwise_conv2d: weight must be (C,1,kh,kw)");
    if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0)
        throw ConfigError("depthwise_conv2d: kernel extents must be odd to preserve H,W");
    const int pad = (w.dim(2) - 1) / 2;
    if (w.dim(3) != w.dim(2)) throw ConfigError("depthwise_conv2d: kernel must be square");
    const ConvDims d = conv_dims(x, w, 1, pad, true);
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.Cout))
        throw DimensionError("depthwise_conv2d: bias shape mismatch");
    Tensor out = Tensor::zeros({d.N, d.Cout, d.Ho, d.Wo});
    conv_forward(d, x.data(), w.data(), bias.defined() ? bias.data() : nullptr, out.data(), true);
    const Tensor* bptr = bias.defined() ? &bias : nullptr;
    if (tape_should_record({&x, &w, bptr})) {
        out.set_requires_grad(true);
        Tensor xc = x, wc = w, bc = bias, oc = out;
        const bool has_bias = bias.defined();
        GradTape::active()->record([xc, wc, bc, oc, d, has_bias]() mutable {
            if (!oc.has_grad()) return;
            conv_backward(d, xc, wc, xc, wc, bc, oc.grad(), true, has_bias);
        });
    }
    return out;
}

// --------------------------------------------------------------------------
// layer_norm
// --------------------------------------------------------------------------

namespace {

struct GroupIndex {
    // offsets of every group start and the offsets of elements within a group
    std::vector<int64_t> outer;
    std::vector<int64_t> inner;
};

GroupIndex group_index(const std::vector<int>& shape, const std::vector<int>& axes) {
    const int nd = int(shape.size());
    std::vector<bool> is_axis(size_t(nd), false);
    for (int a : axes) {
        if (a < 0 || a >= nd) throw DimensionError("layer_norm: axis out of range");
        is_axis[size_t(a)] = true;
    }
    const auto st = strides_of(shape);
    GroupIndex gi;
    gi.outer.push_back(0);
    gi.inner.push_back(0);
    for (int i = nd - 1; i >= 0; --i) {
        auto& list = is_axis[size_t(i)] ? gi.inner : gi.outer;
        std::vector<int64_t> next;
        next.reserve(list.size() * size_t(shape[size_t(i)]));
        for (int c = 0; c < shape[size_t(i)]; ++c)
            for (int64_t o : list) next.push_back(o + c * st[size_t(i)]);
        list = std::move(next);
    }
    std::sort(gi.outer.begin(), gi.outer.end());
    std::sort(gi.inner.begin(), gi.inner.end());
    return gi;
}

}  // namespace

Tensor layer_norm(const Tensor& x, const std::vector<int>& axes, const Tensor& gain,
                  const Tensor& bias, float eps) {
    if (eps <= 0.0f) throw ConfigError("layer_norm: eps must be > 0");
    if (axes.empty()) throw DimensionError("layer_norm: no axes");
    const GroupIndex gi = group_index(x.shape(), axes);
    const int64_t gsize = int64_t(gi.inner.size());
    if (gain.numel() != gsize || bias.numel() != gsize)
        throw DimensionError("layer_norm: gain/bias must have " + std::to_string(gsize) +
                             " elements");
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.data();
    const float* gp = gain.data();
    const float* bp = bias.data();
    float* op = out.data();
    for (int64_t o : gi.outer) {
        double m = 0.0;
        for (int64_t j : gi.inner) m += xp[o + j];
        m /= double(gsize);
        double v = 0.0;
        for (int64_t j : gi.inner) {
            const double dlt = xp[o + j] - m;
            v += dlt * dlt;
        }
        v /= double(gsize);
        const float inv = float(1.0 / std::sqrt(v + double(eps)));
        const float mf = float(m);
        for (int64_t jj = 0; jj < gsize; ++jj) {
            const int64_t j = gi.inner[size_t(jj)];
            op[o + j] = gp[jj] * ((xp[o + j] - mf) * inv) + bp[jj];
        }
    }
    if (tape_should_record({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        GradTape::active()->record([xc, gc, bc, oc, gi, gsize, eps]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const float* xp2 = xc.data();
            const float* gp2 = gc.data();
            float* dx = xc.requires_grad() ? xc.ensure_grad() : nullptr;
            float* dg = gc.requires_grad() ? gc.ensure_grad() : nullptr;
            float* db = bc.requires_grad() ? bc.ensure_grad() : nullptr;
            std::vector<float> y(static_cast<size_t>(gsize));
            for (int64_t o : gi.outer) {
                double m = 0.0;
                for (int64_t j : gi.inner) m += xp2[o + j];
                m /= double(gsize);
                double v = 0.0;
                for (int64_t j : gi.inner) {
                    const double dlt = xp2[o + j] - m;
                    v += dlt * dlt;
                }
                v /= double(gsize);
                const float inv = float(1.0 / std::sqrt(v + double(eps)));
                double sum_gh = 0.0, sum_ghy = 0.0;
                for (int64_t jj = 0; jj < gsize; ++jj) {
                    const int64_t j = gi.inner[size_t(jj)];
                    y[size_t(jj)] = (xp2[o + j] - float(m)) * inv;
                    const float gh = g[o + j] * gp2[jj];
                    sum_gh += gh;
                    sum_ghy += double(gh) * y[size_t(jj)];
                }
                const float mean_gh = float(sum_gh / double(gsize));
                const float mean_ghy = float(sum_ghy / double(gsize));
                for (int64_t jj = 0; jj < gsize; ++jj) {
                    const int64_t j = gi.inner[size_t(jj)];
                    if (dx) {
                        const float gh = g[o + j] * gp2[jj];
                        dx[o + j] += inv * (gh - mean_gh - y[size_t(jj)] * mean_ghy);
                    }
                    if (dg) dg[jj] += g[o + j] * y[size_t(jj)];
                    if (db) db[jj] += g[o + j];
                }
            }
        });
    }
    return out;
}

// --------------------------------------------------------------------------
// batch_norm
// --------------------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Tensor& running_mean,
                  Tensor& running_var, bool training, float momentum, float eps) {
    if (x.ndim() != 4) throw DimensionError("batch_norm: input must be (N,C,H,W)");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (training && N < 2) throw ConfigError("batch_norm: train mode requires batch size >= 2");
    if (gain.numel() != C || bias.numel() != C || running_mean.numel() != C ||
        running_var.numel() != C)
        throw DimensionError("batch_norm: per-channel parameter shape mismatch");

    Tensor out = Tensor::zeros(x.shape());
    const int64_t plane = int64_t(H) * W;
    const int64_t cstride = plane;
    const int64_t nstride = int64_t(C) * plane;
    const float* xp = x.data();
    float* op = out.data();
    const float* gp = gain.data();
    const float* bp = bias.data();

    std::vector<float> mu(static_cast<size_t>(C));
    std::vector<float> inv(static_cast<size_t>(C));
    if (training) {
        const double cnt = double(N) * double(plane);
        for (int c = 0; c < C; ++c) {
            double m = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* p = xp + n * nstride + c * cstride;
                for (int64_t i = 0; i < plane; ++i) m += p[i];
            }
            m /= cnt;
            double v = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* p = xp + n * nstride + c * cstride;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - m;
                    v += d * d;
                }
            }
            const double var_b = v / cnt;
            const double var_u = cnt > 1.0 ? v / (cnt - 1.0) : var_b;
            mu[size_t(c)] = float(m);
            inv[size_t(c)] = float(1.0 / std::sqrt(var_b + double(eps)));
            running_mean.data()[c] = (1.0f - momentum) * running_mean.data()[c] + momentum * float(m);
            running_var.data()[c] = (1.0f - momentum) * running_var.data()[c] + momentum * float(var_u);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mu[size_t(c)] = running_mean.data()[c];
            inv[size_t(c)] = float(1.0 / std::sqrt(double(running_var.data()[c]) + double(eps)));
        }
    }
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = xp + n * nstride + c * cstride;
            float* q = op + n * nstride + c * cstride;
            const float m = mu[size_t(c)], iv = inv[size_t(c)], gv = gp[c], bv = bp[c];
            for (int64_t i = 0; i < plane; ++i) q[i] = gv * ((p[i] - m) * iv) + bv;
        }

    if (tape_should_record({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        std::vector<float> mu_c = mu, inv_c = inv;
        GradTape::active()->record([xc, gc, bc, oc, mu_c, inv_c, training, N, C, plane, nstride,
                                    cstride]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const float* xp2 = xc.data();
            const float* gp2 = gc.data();
            float* dx = xc.requires_grad() ? xc.ensure_grad() : nullptr;
            float* dg = gc.requires_grad() ? gc.ensure_grad() : nullptr;
            float* db = bc.requires_grad() ? bc.ensure_grad() : nullptr;
            const double cnt = double(N) * double(plane);
            for (int c = 0; c < C; ++c) {
                const float m = mu_c[size_t(c)], iv = inv_c[size_t(c)], gv = gp2[c];
                double sum_g = 0.0, sum_gy = 0.0;
                for (int n = 0; n < N; ++n) {
                    const float* p = xp2 + n * nstride + c * cstride;
                    const float* gr = g + n * nstride + c * cstride;
                    for (int64_t i = 0; i < plane; ++i) {
                        const float y = (p[i] - m) * iv;
                        sum_g += gr[i];
                        sum_gy += double(gr[i]) * y;
                    }
                }
                if (dg) dg[c] += float(sum_gy);
                if (db) db[c] += float(sum_g);
                if (!dx) continue;
                if (training) {
                    const float mean_g = float(sum_g / cnt);
                    const float mean_gy = float(sum_gy / cnt);
                    for (int n = 0; n < N; ++n) {
                        const float* p = xp2 + n * nstride + c * cstride;
                        const float* gr = g + n * nstride + c * cstride;
                        float* dq = dx + n * nstride + c * cstride;
                        for (int64_t i = 0; i < plane; ++i) {
                            const float y = (p[i] - m) * iv;
                            dq[i] += gv * iv * (gr[i] - mean_g - y * mean_gy);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const float* gr = g + n * nstride + c * cstride;
                        float* dq = dx + n * nstride + c * cstride;
                        for (int64_t i = 0; i < plane; ++i) dq[i] += gv * iv * gr[i];
                    }
                }
            }
        });
    }
    return out;
}

// --------------------------------------------------------------------------
// softmax
// --------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    const int nd = x.ndim();
    if (axis < 0 || axis >= nd) throw DimensionError("softmax: axis out of range");
    const auto& sh = x.shape();
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < nd; ++i) inner *= sh[size_t(i)];
    for (int i = 0; i < axis; ++i) outer *= sh[size_t(i)];
    const int L = sh[size_t(axis)];
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.data();
    float* op = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * L * inner + in;
            float mx = -std::numeric_limits<float>::infinity();
            for (int l = 0; l < L; ++l) mx = std::max(mx, xp[base + l * inner]);
            double z = 0.0;
            for (int l = 0; l < L; ++l) {
                const float e = std::exp(xp[base + l * inner] - mx);
                op[base + l * inner] = e;
                z += e;
            }
            const float izf = float(1.0 / z);
            for (int l = 0; l < L; ++l) op[base + l * inner] *= izf;
        }
    }
    if (tape_should_record({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        GradTape::active()->record([xc, oc, outer, inner, L]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const float* s = oc.data();
            float* dx = xc.ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * L * inner + in;
                    double dot = 0.0;
                    for (int l = 0; l < L; ++l) dot += double(g[base + l * inner]) * s[base + l * inner];
                    for (int l = 0; l < L; ++l)
                        dx[base + l * inner] +=
                            s[base + l * inner] * (g[base + l * inner] - float(dot));
                }
            }
        });
    }
    return out;
}

// --------------------------------------------------------------------------
// Streaming attention core
// --------------------------------------------------------------------------

namespace {

struct AttnDims {
    int64_t B;
    int Tq, Tk, d;
};

AttnDims attn_dims(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mult,
                   const Tensor& dist) {
    if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
        throw DimensionError("attention_core: q,k,v must be (B,T,d)");
    AttnDims a;
    a.B = q.dim(0);
    a.Tq = q.dim(1);
    a.d = q.dim(2);
    a.Tk = k.dim(1);
    if (k.dim(0) != a.B || v.dim(0) != a.B || v.dim(1) != a.Tk || k.dim(2) != a.d ||
        v.dim(2) != a.d)
        throw DimensionError("attention_core: q " + shape_str(q.shape()) + ", k " +
                             shape_str(k.shape()) + ", v " + shape_str(v.shape()) +
                             " are inconsistent");
    if (mult.defined()) {
        if (mult.ndim() != 2 || mult.dim(0) != a.Tq || mult.dim(1) != a.Tk)
            throw DimensionError("attention_core: reweighting matrix must be (Tq,Tk), got " +
                                 shape_str(mult.shape()));
        if (dist.defined() && dist.shape() != mult.shape())
            throw DimensionError("attention_core: dist/mult shape mismatch");
    }
    return a;
}

// Computes one softmax row (reweighted, optionally renormalized).
// srow: scratch of Tk scores -> on return holds the final row weights.
// Also returns the plain softmax row in sfx when requested (backward needs it).
void attn_row(const float* qrow, const float* kp, const float* mrow, int Tk, int d, float scale,
              bool renorm, float* srow, float* sfx) {
    for (int j = 0; j < Tk; ++j) {
        const float* krow = kp + int64_t(j) * d;
        float acc = 0.0f;
        for (int l = 0; l < d; ++l) acc += qrow[l] * krow[l];
        srow[j] = acc * scale;
    }
    float mx = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < Tk; ++j) mx = std::max(mx, srow[j]);
    double z = 0.0;
    for (int j = 0; j < Tk; ++j) {
        const float e = std::exp(srow[j] - mx);
        srow[j] = e;
        z += e;
    }
    const float iz = float(1.0 / z);
    if (sfx) {
        for (int j = 0; j < Tk; ++j) {
            srow[j] *= iz;
            sfx[j] = srow[j];
        }
    } else {
        for (int j = 0; j < Tk; ++j) srow[j] *= iz;
    }
    if (mrow) {
        for (int j = 0; j < Tk; ++j) srow[j] *= mrow[j];
        if (renorm) {
            double r = 0.0;
            for (int j = 0; j < Tk; ++j) r += srow[j];
            const float ir = float(1.0 / r);
            for (int j = 0; j < Tk; ++j) srow[j] *= ir;
        }
    }
}

}  // namespace

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, float scale,
                      const Tensor& mult, const Tensor& dist, const Tensor& alpha,
                      bool renormalize) {
    const AttnDims a = attn_dims(q, k, v, mult, dist);
    if (alpha.defined() && (!mult.defined() || !dist.defined()))
        throw DimensionError("attention_core: alpha gradient requires mult and dist");
    Tensor out = Tensor::zeros({int(a.B), a.Tq, a.d});
    const float* qp = q.data();
    const float* kp = k.data();
    const float* vp = v.data();
    const float* mp = mult.defined() ? mult.data() : nullptr;
    float* op = out.data();
    const int64_t qn = int64_t(a.Tq) * a.d;
    const int64_t kn = int64_t(a.Tk) * a.d;
    std::vector<float> srow(static_cast<size_t>(a.Tk));
    for (int64_t b = 0; b < a.B; ++b) {
        const float* qb = qp + b * qn;
        const float* kb = kp + b * kn;
        const float* vb = vp + b * kn;
        float* ob = op + b * qn;
        for (int i = 0; i < a.Tq; ++i) {
            attn_row(qb + int64_t(i) * a.d, kb, mp ? mp + int64_t(i) * a.Tk : nullptr, a.Tk, a.d,
                     scale, renormalize, srow.data(), nullptr);
            float* orow = ob + int64_t(i) * a.d;
            for (int l = 0; l < a.d; ++l) orow[l] = 0.0f;
            for (int j = 0; j < a.Tk; ++j) {
                const float wj = srow[j];
                if (wj == 0.0f) continue;
                const float* vrow = vb + int64_t(j) * a.d;
                for (int l = 0; l < a.d; ++l) orow[l] += wj * vrow[l];
            }
        }
    }

    const Tensor* aptr = alpha.defined() ? &alpha : nullptr;
    if (tape_should_record({&q, &k, &v, aptr})) {
        out.set_requires_grad(true);
        Tensor qc = q, kc = k, vc = v, mc = mult, dc = dist, ac = alpha, oc = out;
        GradTape::active()->record([qc, kc, vc, mc, dc, ac, oc, a, scale, renormalize]() mutable {
            if (!oc.has_grad()) return;
            const float* g = oc.grad();
            const float* qp2 = qc.data();
            const float* kp2 = kc.data();
            const float* vp2 = vc.data();
            const float* mp2 = mc.defined() ? mc.data() : nullptr;
            const float* dp2 = dc.defined() ? dc.data() : nullptr;
            float* dq = qc.requires_grad() ? qc.ensure_grad() : nullptr;
            float* dk = kc.requires_grad() ? kc.ensure_grad() : nullptr;
            float* dv = vc.requires_grad() ? vc.ensure_grad() : nullptr;
            const bool want_alpha = ac.defined() && ac.requires_grad();
            double dalpha = 0.0;
            const int64_t qn2 = int64_t(a.Tq) * a.d;
            const int64_t kn2 = int64_t(a.Tk) * a.d;
            std::vector<float> wrow(static_cast<size_t>(a.Tk)), sfx(wrow), grow(wrow),
                dz(wrow);
            for (int64_t b = 0; b < a.B; ++b) {
                const float* qb = qp2 + b * qn2;
                const float* kb = kp2 + b * kn2;
                const float* vb = vp2 + b * kn2;
                const float* gb = g + b * qn2;
                for (int i = 0; i < a.Tq; ++i) {
                    const float* qrow = qb + int64_t(i) * a.d;
                    const float* grad_row = gb + int64_t(i) * a.d;
                    const float* mrow = mp2 ? mp2 + int64_t(i) * a.Tk : nullptr;
                    attn_row(qrow, kb, mrow, a.Tk, a.d, scale, renormalize, wrow.data(),
                             sfx.data());
                    // g_j = dOut_i . v_j  and dv accumulation
                    for (int j = 0; j < a.Tk; ++j) {
                        const float* vrow = vb + int64_t(j) * a.d;
                        float acc = 0.0f;
                        for (int l = 0; l < a.d; ++l) acc += grad_row[l] * vrow[l];
                        grow[j] = acc;
                        if (dv && wrow[j] != 0.0f) {
                            float* dvrow = dv + b * kn2 + int64_t(j) * a.d;
                            for (int l = 0; l < a.d; ++l) dvrow[l] += wrow[j] * grad_row[l];
                        }
                    }
                    // unwind renormalization: w = u / R
                    if (mrow && renormalize) {
                        // recompute R = sum u where u = sfx * mult
                        double r = 0.0, s1 = 0.0;
                        for (int j = 0; j < a.Tk; ++j) r += double(sfx[j]) * mrow[j];
                        for (int j = 0; j < a.Tk; ++j) s1 += double(wrow[j]) * grow[j];
                        const float ir = float(1.0 / r);
                        for (int j = 0; j < a.Tk; ++j) grow[j] = (grow[j] - float(s1)) * ir;
                    }
                    // through the elementwise reweighting: u = sfx * mult
                    if (mrow) {
                        if (want_alpha && dp2) {
                            const float* drow = dp2 + int64_t(i) * a.Tk;
                            double acc = 0.0;
                            for (int j = 0; j < a.Tk; ++j)
                                acc += double(grow[j]) * sfx[j] * mrow[j] * drow[j];
                            dalpha += acc;
                        }
                        for (int j = 0; j < a.Tk; ++j) grow[j] *= mrow[j];
                    }
                    // softmax backward within the row
                    double dot = 0.0;
                    for (int j = 0; j < a.Tk; ++j) dot += double(grow[j]) * sfx[j];
                    for (int j = 0; j < a.Tk; ++j) dz[j] = sfx[j] * (grow[j] - float(dot)) * scale;
                    if (dq) {
                        float* dqrow = dq + b * qn2 + int64_t(i) * a.d;
                        for (int j = 0; j < a.Tk; ++j) {
                            const float z = dz[j];
                            if (z == 0.0f) continue;
                            const float* krow = kb + int64_t(j) * a.d;
                            for (int l = 0; l < a.d; ++l) dqrow[l] += z * krow[l];
                        }
                    }
                    if (dk) {
                        for (int j = 0; j < a.Tk; ++j) {
                            const float z = dz[j];
                            if (z == 0.0f) continue;
                            float* dkrow = dk + b * kn2 + int64_t(j) * a.d;
                            for (int l = 0; l < a.d; ++l) dkrow[l] += z * qrow[l];
                        }
                    }
                }
            }
            if (want_alpha) ac.ensure_grad()[0] += float(dalpha);
        });
    }
    return out;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, float scale) {
    return attention_core(q, k, v, scale, Tensor(), Tensor(), Tensor(), false);
}

Tensor exp_alpha_dist(float alpha, const Tensor& dist) {
    Tensor out = Tensor::zeros(dist.shape());
    const float* dp = dist.data();
    float* op = out.data();
    const int64_t n = dist.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = std::exp(alpha * dp[i]);
    return out;
}

}  // namespace ops
}  // namespace rbnet
