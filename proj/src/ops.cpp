#include <cmath>
#include <limits>
#include <numbers>

#include "pheye/tensor.hpp"
#include "tensor_internal.hpp"

namespace pheye {

namespace {

using detail::Node;

void require_matrix(const Tensor& x, const char* op) {
    if (x.rank() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got " + shape_to_string(x.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

// c[n x o] += a[n x d] * b[d x o]; k-loop outermost per row keeps the
// summation order identical to the textbook triple loop.
void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t d, std::size_t o) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * o;
        const double* arow = a + i * d;
        for (std::size_t k = 0; k < d; ++k) {
            const double av = arow[k];
            const double* brow = b + k * o;
            for (std::size_t j = 0; j < o; ++j) crow[j] += av * brow[j];
        }
    }
}

std::size_t last_extent(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, MulCategory category, MulLedger& ledger) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()));
    }
    const std::size_t n = a.dim(0), d = a.dim(1), o = b.dim(1);
    std::vector<double> out(n * o, 0.0);
    gemm_acc(a.data().data(), b.data().data(), out.data(), n, d, o);
    ledger.add(category, static_cast<std::uint64_t>(n) * o * d);

    return OpBuilder::make({n, o}, std::move(out), {a, b}, [n, d, o](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* g = self.grad.data();
        if (pa.requires_grad) {
            // dA[i,k] += sum_j g[i,j] * B[k,j]
            auto& ga = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < d; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < o; ++j) acc += g[i * o + j] * pb.data[k * o + j];
                    ga[i * d + k] += acc;
                }
            }
        }
        if (pb.requires_grad) {
            // dB[k,j] += sum_i A[i,k] * g[i,j]
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < d; ++k) {
                    const double av = pa.data[i * d + k];
                    for (std::size_t j = 0; j < o; ++j) gb[k * o + j] += av * g[i * o + j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& x) {
    require_matrix(x, "transpose");
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(r * c);
    auto in = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    return OpBuilder::make({c, r}, std::move(out), {x}, [r, c](Node& self) {
        Node& p = *self.parents[0];
        auto& gp = p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += self.grad[j * r + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
    return OpBuilder::make(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (auto& parent : self.parents) {
            if (!parent->requires_grad) continue;
            auto& g = parent->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const std::size_t d = last_extent(x.shape());
    if (bias.rank() != 1 || bias.dim(0) != d) {
        throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                             shape_to_string(x.shape()));
    }
    std::vector<double> out(x.numel());
    auto dx = x.data(), db = bias.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] + db[i % d];
    return OpBuilder::make(x.shape(), std::move(out), {x, bias}, [d](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad) {
            auto& g = px.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    return OpBuilder::make(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
    return OpBuilder::make(x.shape(), std::move(out), {x}, [factor](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return OpBuilder::make({}, {total}, {x}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5 * dx[i] * (1.0 + std::erf(dx[i] * kInvSqrt2));
    }
    return OpBuilder::make(x.shape(), std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix(x, "softmax_rows");
    const std::size_t n = x.dim(0), m = x.dim(1);
    auto in = x.data();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = in.data() + i * m;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            if (std::isnan(row[j]) || row[j] == std::numeric_limits<double>::infinity()) {
                throw NumericError("softmax_rows: non-finite input at (" + std::to_string(i) + ", " +
                                   std::to_string(j) + ")");
            }
            peak = std::max(peak, row[j]);
        }
        if (std::isinf(peak)) throw NumericError("softmax_rows: row " + std::to_string(i) + " is fully masked");
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            out[i * m + j] = std::exp(row[j] - peak);
            total += out[i * m + j];
        }
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= total;
    }
    return OpBuilder::make({n, m}, out, {x}, [n, m, y = out](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * y[i * m + j];
            for (std::size_t j = 0; j < m; ++j) g[i * m + j] += y[i * m + j] * (self.grad[i * m + j] - dot);
        }
    });
}

Tensor causal_mask(const Tensor& x) {
    require_matrix(x, "causal_mask");
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (n != m) throw DimensionError("causal_mask expects a square matrix, got " + shape_to_string(x.shape()));
    std::vector<double> out = x.to_vector();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < m; ++j) out[i * m + j] = -std::numeric_limits<double>::infinity();
    return OpBuilder::make({n, m}, std::move(out), {x}, [m](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i * m < g.size(); ++i)
            for (std::size_t j = 0; j <= i && j < m; ++j) g[i * m + j] += self.grad[i * m + j];
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
    const std::size_t d = x.shape().back();
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
        throw DimensionError("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                             shape_to_string(bias.shape()) + " do not match " + shape_to_string(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    auto in = x.data(), gv = gain.data(), bv = bias.data();
    std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (row[j] - mean) * inv_std[r];
            out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
        }
    }
    return OpBuilder::make(x.shape(), std::move(out), {x, gain, bias},
                           [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const auto& g = self.grad;
        if (pg.requires_grad) {
            auto& gg = pg.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (pb.requires_grad) {
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (px.requires_grad) {
            auto& gx = px.ensure_grad();
            const double dd = static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxh = g[r * d + j] * pg.data[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat[r * d + j];
                }
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxh = g[r * d + j] * pg.data[j];
                    gx[r * d + j] += inv_std[r] / dd *
                                     (dd * dxh - sum_dxhat - xhat[r * d + j] * sum_dxhat_xhat);
                }
            }
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    require_matrix(x, "slice_rows");
    const std::size_t cols = x.dim(1);
    if (count == 0 || start + count > x.dim(0)) {
        throw DimensionError("slice_rows [" + std::to_string(start) + ", +" + std::to_string(count) +
                             ") out of range for " + shape_to_string(x.shape()));
    }
    auto in = x.data();
    std::vector<double> out(in.begin() + start * cols, in.begin() + (start + count) * cols);
    return OpBuilder::make({count, cols}, std::move(out), {x}, [start, cols](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * cols + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_matrix(x, "slice_cols");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (count == 0 || start + count > cols) {
        throw DimensionError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
                             ") out of range for " + shape_to_string(x.shape()));
    }
    auto in = x.data();
    std::vector<double> out(rows * count);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = in[i * cols + start + j];
    return OpBuilder::make({rows, count}, std::move(out), {x}, [rows, cols, start, count](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < count; ++j) g[i * cols + start + j] += self.grad[i * count + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    const std::size_t cols = parts.front().dim(1);
    std::size_t rows = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        if (p.dim(1) != cols) {
            throw DimensionError("concat_rows: column mismatch " + shape_to_string(parts.front().shape()) +
                                 " vs " + shape_to_string(p.shape()));
        }
        offsets.push_back(rows * cols);
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return OpBuilder::make({rows, cols}, std::move(out), parts, [offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    const std::size_t rows = parts.front().dim(0);
    std::size_t cols = 0;
    std::vector<std::size_t> offsets, widths;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.dim(0) != rows) {
            throw DimensionError("concat_cols: row mismatch " + shape_to_string(parts.front().shape()) +
                                 " vs " + shape_to_string(p.shape()));
        }
        offsets.push_back(cols);
        widths.push_back(p.dim(1));
        cols += p.dim(1);
    }
    std::vector<double> out(rows * cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto in = parts[k].data();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out[i * cols + offsets[k] + j] = in[i * widths[k] + j];
    }
    return OpBuilder::make({rows, cols}, std::move(out), parts, [rows, cols, offsets, widths](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * cols + offsets[k] + j];
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_matrix(table, "embedding");
    if (ids.empty()) throw InputError("embedding: empty id sequence");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<int> rows(ids.begin(), ids.end());
    std::vector<double> out(rows.size() * d);
    auto in = table.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
            throw InputError("token id " + std::to_string(rows[i]) + " outside vocabulary of " + std::to_string(vocab));
        }
        std::copy_n(in.begin() + rows[i] * d, d, out.begin() + i * d);
    }
    return OpBuilder::make({rows.size(), d}, std::move(out), {table}, [rows, d](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
    });
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, const std::vector<bool>& mask) {
    require_matrix(logits, "cross_entropy_sum");
    const std::size_t n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != n || mask.size() != n) {
        throw DimensionError("cross_entropy_sum: " + std::to_string(targets.size()) + " targets / " +
                             std::to_string(mask.size()) + " mask entries for " + shape_to_string(logits.shape()));
    }
    auto in = logits.data();
    std::vector<double> probs(n * v, 0.0);
    std::vector<int> tgt(targets.begin(), targets.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= v) {
            throw InputError("target id " + std::to_string(tgt[i]) + " outside vocabulary of " + std::to_string(v));
        }
        const double* row = in.data() + i * v;
        double peak = row[0];
        for (std::size_t j = 1; j < v; ++j) peak = std::max(peak, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - peak);
        const double log_z = peak + std::log(z);
        if (!std::isfinite(log_z)) throw NumericError("cross_entropy_sum: non-finite logits in row " + std::to_string(i));
        total += log_z - row[tgt[i]];
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - log_z);
    }
    return OpBuilder::make({}, {total}, {logits}, [n, v, probs = std::move(probs), tgt, mask](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double up = self.grad[0];
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            for (std::size_t j = 0; j < v; ++j) g[i * v + j] += up * probs[i * v + j];
            g[i * v + tgt[i]] -= up;
        }
    });
}

}  // namespace pheye
