#include "flowsg/numkit/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace flowsg::numkit {

namespace {

const double kGeluC0 = std::sqrt(2.0 / std::numbers::pi);
constexpr double kGeluC1 = 0.044715;

double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("Tape: " + msg);
}

}  // namespace

int Tape::check(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::out_of_range("Tape: node id " + std::to_string(id) + " out of range");
    return id;
}

int Tape::emit(Array val, std::function<void()> back) {
    Node n;
    n.grad = Array(val.shape, 0.0);
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(Array v) {
    require(v.rank() == 2, "leaves must be rank-2");
    return emit(std::move(v));
}

int Tape::param(Array v) { return input(std::move(v)); }

int Tape::add(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.same_shape(bv), "add: shape mismatch");
    Array out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    return emit(std::move(out), [this, a, b, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ga = grad_mut(a);
        Array& gb = grad_mut(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] += g.data[i];
        }
    });
}

int Tape::sub(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.same_shape(bv), "sub: shape mismatch");
    Array out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    return emit(std::move(out), [this, a, b, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ga = grad_mut(a);
        Array& gb = grad_mut(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] -= g.data[i];
        }
    });
}

int Tape::mul(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.same_shape(bv), "mul: shape mismatch");
    Array out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    return emit(std::move(out), [this, a, b, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        const Array& bv = value(b);
        Array& ga = grad_mut(a);
        Array& gb = grad_mut(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] += g.data[i] * bv.data[i];
            gb.data[i] += g.data[i] * av.data[i];
        }
    });
}

int Tape::div(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.same_shape(bv), "div: shape mismatch");
    Array out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= bv.data[i];
    return emit(std::move(out), [this, a, b, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        const Array& bv = value(b);
        Array& ga = grad_mut(a);
        Array& gb = grad_mut(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double inv = 1.0 / bv.data[i];
            ga.data[i] += g.data[i] * inv;
            gb.data[i] -= g.data[i] * av.data[i] * inv * inv;
        }
    });
}

int Tape::add_rowvec(int a, int v) {
    const Array& av = value(a);
    const Array& vv = value(v);
    require(vv.rows() == 1 && vv.cols() == av.cols(), "add_rowvec: v must be 1 x cols(a)");
    Array out = av;
    const std::size_t m = av.rows(), n = av.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += vv.data[j];
    return emit(std::move(out), [this, a, v, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ga = grad_mut(a);
        Array& gv = grad_mut(v);
        const std::size_t m = g.rows(), n = g.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                ga.data[i * n + j] += g.data[i * n + j];
                gv.data[j] += g.data[i * n + j];
            }
    });
}

int Tape::mul_rowvec(int a, int v) {
    const Array& av = value(a);
    const Array& vv = value(v);
    require(vv.rows() == 1 && vv.cols() == av.cols(), "mul_rowvec: v must be 1 x cols(a)");
    Array out = av;
    const std::size_t m = av.rows(), n = av.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] *= vv.data[j];
    return emit(std::move(out), [this, a, v, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        const Array& vv = value(v);
        Array& ga = grad_mut(a);
        Array& gv = grad_mut(v);
        const std::size_t m = g.rows(), n = g.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                ga.data[i * n + j] += g.data[i * n + j] * vv.data[j];
                gv.data[j] += g.data[i * n + j] * av.data[i * n + j];
            }
    });
}

int Tape::mul_colvec(int a, int c) {
    const Array& av = value(a);
    const Array& cv = value(c);
    require(cv.cols() == 1 && cv.rows() == av.rows(), "mul_colvec: c must be rows(a) x 1");
    Array out = av;
    const std::size_t m = av.rows(), n = av.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] *= cv.data[i];
    return emit(std::move(out), [this, a, c, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        const Array& cv = value(c);
        Array& ga = grad_mut(a);
        Array& gc = grad_mut(c);
        const std::size_t m = g.rows(), n = g.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                ga.data[i * n + j] += g.data[i * n + j] * cv.data[i];
                gc.data[i] += g.data[i * n + j] * av.data[i * n + j];
            }
    });
}

int Tape::scale(int a, double s) {
    Array out = value(a);
    for (double& x : out.data) x *= s;
    return emit(std::move(out), [this, a, s, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * s;
    });
}

int Tape::add_const(int a, double c) {
    Array out = value(a);
    for (double& x : out.data) x += c;
    return emit(std::move(out), [this, a, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    });
}

int Tape::matmul(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.cols() == bv.rows(), "matmul: inner dims differ");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Array out(m, n, 0.0);
    const double* A = av.data.data();
    const double* B = bv.data.data();
    double* C = out.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double s = arow[kk];
            const double* brow = B + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
    return emit(std::move(out), [this, a, b, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        const Array& bv = value(b);
        Array& ga = grad_mut(a);
        Array& gb = grad_mut(b);
        const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data.data() + i * n;
            double* garow = ga.data.data() + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* brow = bv.data.data() + kk * n;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                garow[kk] += acc;
            }
        }
        // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = av.data.data() + i * k;
            const double* grow = g.data.data() + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double s = arow[kk];
                double* gbrow = gb.data.data() + kk * n;
                for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
            }
        }
    });
}

int Tape::matmul_nt(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.cols() == bv.cols(), "matmul_nt: inner dims differ");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    Array out(m, n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av.data.data() + i * k;
        double* crow = out.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = bv.data.data() + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
    return emit(std::move(out), [this, a, b, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        const Array& bv = value(b);
        Array& ga = grad_mut(a);
        Array& gb = grad_mut(b);
        const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
        for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data.data() + i * n;
            double* garow = ga.data.data() + i * k;
            const double* arow = av.data.data() + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const double s = grow[j];
                const double* brow = bv.data.data() + j * k;
                double* gbrow = gb.data.data() + j * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    garow[kk] += s * brow[kk];
                    gbrow[kk] += s * arow[kk];
                }
            }
        }
    });
}

int Tape::matmul_sorted(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.cols() == bv.rows(), "matmul_sorted: inner dims differ");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Array out(m, n, 0.0);
    std::vector<double> terms(k);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t kk = 0; kk < k; ++kk)
                terms[kk] = av.data[i * k + kk] * bv.data[kk * n + j];
            out.data[i * n + j] = sorted_sum(terms);
        }
    }
    return emit(std::move(out), [this, a, b, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        const Array& bv = value(b);
        Array& ga = grad_mut(a);
        Array& gb = grad_mut(b);
        const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += g.data[i * n + j] * bv.data[kk * n + j];
                    gb.data[kk * n + j] += av.data[i * k + kk] * g.data[i * n + j];
                }
                ga.data[i * k + kk] += acc;
            }
    });
}

int Tape::slice_cols(int a, std::size_t c0, std::size_t c1) {
    const Array& av = value(a);
    require(c0 < c1 && c1 <= av.cols(), "slice_cols: bad range");
    const std::size_t m = av.rows(), n = av.cols(), w = c1 - c0;
    Array out(m, w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = av.data[i * n + c0 + j];
    return emit(std::move(out), [this, a, c0, w, n, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ga = grad_mut(a);
        const std::size_t m = g.rows();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) ga.data[i * n + c0 + j] += g.data[i * w + j];
    });
}

int Tape::concat_cols(const std::vector<int>& parts) {
    require(!parts.empty(), "concat_cols: empty part list");
    const std::size_t m = value(parts[0]).rows();
    std::size_t total = 0;
    for (int p : parts) {
        require(value(p).rows() == m, "concat_cols: row mismatch");
        total += value(p).cols();
    }
    Array out(m, total);
    std::size_t off = 0;
    for (int p : parts) {
        const Array& pv = value(p);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j)
                out.data[i * total + off + j] = pv.data[i * pv.cols() + j];
        off += pv.cols();
    }
    return emit(std::move(out), [this, parts, total, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const std::size_t m = g.rows();
        std::size_t off = 0;
        for (int p : parts) {
            Array& gp = grad_mut(p);
            const std::size_t w = gp.cols();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    gp.data[i * w + j] += g.data[i * total + off + j];
            off += w;
        }
    });
}

int Tape::concat_rows(const std::vector<int>& parts) {
    require(!parts.empty(), "concat_rows: empty part list");
    const std::size_t n = value(parts[0]).cols();
    std::size_t total = 0;
    for (int p : parts) {
        require(value(p).cols() == n, "concat_rows: column mismatch");
        total += value(p).rows();
    }
    Array out(total, n);
    std::size_t off = 0;
    for (int p : parts) {
        const Array& pv = value(p);
        std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + off * n);
        off += pv.rows();
    }
    return emit(std::move(out), [this, parts, n, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        std::size_t off = 0;
        for (int p : parts) {
            Array& gp = grad_mut(p);
            const std::size_t r = gp.rows();
            for (std::size_t i = 0; i < r * n; ++i) gp.data[i] += g.data[off * n + i];
            off += r;
        }
    });
}

int Tape::gather_rows(int a, std::vector<std::size_t> idx) {
    const Array& av = value(a);
    const std::size_t n = av.cols();
    for (std::size_t r : idx)
        if (r >= av.rows()) throw std::out_of_range("gather_rows: row index out of range");
    Array out(idx.size(), n);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(av.data.begin() + idx[i] * n, av.data.begin() + (idx[i] + 1) * n,
                  out.data.begin() + i * n);
    return emit(std::move(out),
                [this, a, idx = std::move(idx), n, id = static_cast<int>(nodes_.size())] {
                    const Array& g = grad(id);
                    Array& ga = grad_mut(a);
                    for (std::size_t i = 0; i < idx.size(); ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            ga.data[idx[i] * n + j] += g.data[i * n + j];
                });
}

int Tape::broadcast_row(int v, std::size_t m) {
    const Array& vv = value(v);
    require(vv.rows() == 1, "broadcast_row: source must be 1 x n");
    const std::size_t n = vv.cols();
    Array out(m, n);
    for (std::size_t i = 0; i < m; ++i)
        std::copy(vv.data.begin(), vv.data.end(), out.data.begin() + i * n);
    return emit(std::move(out), [this, v, m, n, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& gv = grad_mut(v);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gv.data[j] += g.data[i * n + j];
    });
}

int Tape::sum_all(int a) {
    const Array& av = value(a);
    double s = 0.0;
    for (double x : av.data) s += x;
    return emit(Array::scalar(s), [this, a, id = static_cast<int>(nodes_.size())] {
        const double g = grad(id).data[0];
        Array& ga = grad_mut(a);
        for (double& x : ga.data) x += g;
    });
}

int Tape::mean_all(int a) {
    const Array& av = value(a);
    const double inv = 1.0 / static_cast<double>(av.numel());
    double s = 0.0;
    for (double x : av.data) s += x;
    return emit(Array::scalar(s * inv), [this, a, inv, id = static_cast<int>(nodes_.size())] {
        const double g = grad(id).data[0] * inv;
        Array& ga = grad_mut(a);
        for (double& x : ga.data) x += g;
    });
}

int Tape::softmax_rows(int a) {
    const Array& av = value(a);
    const std::size_t m = av.rows(), n = av.cols();
    Array out(m, n);
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = av.data[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av.data[i * n + j]);
        for (std::size_t j = 0; j < n; ++j) {
            out.data[i * n + j] = std::exp(av.data[i * n + j] - mx);
            terms[j] = out.data[i * n + j];
        }
        const double inv = 1.0 / sorted_sum(terms);
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] *= inv;
    }
    return emit(std::move(out), [this, a, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& p = value(id);
        Array& ga = grad_mut(a);
        const std::size_t m = p.rows(), n = p.cols();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g.data[i * n + j] * p.data[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                ga.data[i * n + j] += p.data[i * n + j] * (g.data[i * n + j] - dot);
        }
    });
}

int Tape::layer_norm_rows(int a, double eps) {
    const Array& av = value(a);
    const std::size_t m = av.rows(), n = av.cols();
    require(n > 0, "layer_norm_rows: empty rows");
    Array out(m, n);
    Array inv_std(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += av.data[i * n + j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = av.data[i * n + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std.data[i] = is;
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = (av.data[i * n + j] - mean) * is;
    }
    return emit(std::move(out),
                [this, a, inv_std = std::move(inv_std), id = static_cast<int>(nodes_.size())] {
                    const Array& g = grad(id);
                    const Array& y = value(id);
                    Array& ga = grad_mut(a);
                    const std::size_t m = y.rows(), n = y.cols();
                    const double invn = 1.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                        double gmean = 0.0, gymean = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                            gmean += g.data[i * n + j];
                            gymean += g.data[i * n + j] * y.data[i * n + j];
                        }
                        gmean *= invn;
                        gymean *= invn;
                        const double is = inv_std.data[i];
                        for (std::size_t j = 0; j < n; ++j)
                            ga.data[i * n + j] +=
                                is * (g.data[i * n + j] - gmean - y.data[i * n + j] * gymean);
                    }
                });
}

int Tape::gelu(int a) {
    const Array& av = value(a);
    Array out = av;
    for (double& x : out.data) {
        const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
        x = 0.5 * x * (1.0 + std::tanh(u));
    }
    return emit(std::move(out), [this, a, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        Array& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double x = av.data[i];
            const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
            const double t = std::tanh(u);
            const double d = 0.5 * (1.0 + t) +
                             0.5 * x * (1.0 - t * t) * kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
            ga.data[i] += g.data[i] * d;
        }
    });
}

int Tape::tanh_op(int a) {
    Array out = value(a);
    for (double& x : out.data) x = std::tanh(x);
    return emit(std::move(out), [this, a, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& y = value(id);
        Array& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
}

int Tape::exp_op(int a) {
    Array out = value(a);
    for (double& x : out.data) x = std::exp(x);
    return emit(std::move(out), [this, a, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& y = value(id);
        Array& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
    });
}

int Tape::log_op(int a) {
    Array out = value(a);
    for (double& x : out.data) x = std::log(x);
    return emit(std::move(out), [this, a, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& av = value(a);
        Array& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] / av.data[i];
    });
}

int Tape::sqrt_op(int a) {
    Array out = value(a);
    for (double& x : out.data) x = std::sqrt(x);
    return emit(std::move(out), [this, a, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        const Array& y = value(id);
        Array& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * 0.5 / y.data[i];
    });
}

int Tape::cross_entropy(int logits, std::vector<std::size_t> targets) {
    const Array& lv = value(logits);
    const std::size_t m = lv.rows(), n = lv.cols();
    require(targets.size() == m, "cross_entropy: one target per row required");
    for (std::size_t t : targets)
        if (t >= n) throw std::out_of_range("cross_entropy: target outside class range");
    Array probs(m, n);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = lv.data[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, lv.data[i * n + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            probs.data[i * n + j] = std::exp(lv.data[i * n + j] - mx);
            denom += probs.data[i * n + j];
        }
        const double inv = 1.0 / denom;
        for (std::size_t j = 0; j < n; ++j) probs.data[i * n + j] *= inv;
        loss -= std::log(probs.data[i * n + targets[i]]);
    }
    loss /= static_cast<double>(m);
    return emit(Array::scalar(loss),
                [this, logits, probs = std::move(probs), targets = std::move(targets),
                 id = static_cast<int>(nodes_.size())] {
                    const double g = grad(id).data[0] / static_cast<double>(probs.rows());
                    Array& gl = grad_mut(logits);
                    const std::size_t m = probs.rows(), n = probs.cols();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            const double ind = (j == targets[i]) ? 1.0 : 0.0;
                            gl.data[i * n + j] += g * (probs.data[i * n + j] - ind);
                        }
                });
}

int Tape::mean_others(int node_vals) {
    const Array& av = value(node_vals);
    const std::size_t n = av.rows(), f = av.cols();
    require(n >= 2, "mean_others: needs at least two rows");
    const double inv = 1.0 / static_cast<double>(n - 1);
    Array out(n, f);
    std::vector<double> terms(n - 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < f; ++c) {
            std::size_t t = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) terms[t++] = av.data[j * f + c];
            out.data[i * f + c] = sorted_sum(terms) * inv;
        }
    return emit(std::move(out), [this, node_vals, inv, id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ga = grad_mut(node_vals);
        const std::size_t n = g.rows(), f = g.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                for (std::size_t c = 0; c < f; ++c)
                    ga.data[j * f + c] += g.data[i * f + c] * inv;
            }
    });
}

int Tape::edge_mean_per_node(int edge_vals, const std::vector<std::pair<int, int>>& pairs,
                             std::size_t n_nodes) {
    const Array& ev = value(edge_vals);
    require(ev.rows() == pairs.size(), "edge_mean_per_node: one row per edge required");
    const std::size_t f = ev.cols();
    std::vector<std::vector<std::size_t>> incident(n_nodes);
    for (std::size_t e = 0; e < pairs.size(); ++e) {
        const auto [i, j] = pairs[e];
        require(i >= 0 && j >= 0 && static_cast<std::size_t>(i) < n_nodes &&
                    static_cast<std::size_t>(j) < n_nodes && i != j,
                "edge_mean_per_node: bad edge pair");
        incident[static_cast<std::size_t>(i)].push_back(e);
        incident[static_cast<std::size_t>(j)].push_back(e);
    }
    Array out(n_nodes, f, 0.0);
    std::vector<double> terms;
    for (std::size_t i = 0; i < n_nodes; ++i) {
        if (incident[i].empty()) continue;
        const double inv = 1.0 / static_cast<double>(incident[i].size());
        terms.resize(incident[i].size());
        for (std::size_t c = 0; c < f; ++c) {
            for (std::size_t t = 0; t < incident[i].size(); ++t)
                terms[t] = ev.data[incident[i][t] * f + c];
            out.data[i * f + c] = sorted_sum(terms) * inv;
        }
    }
    return emit(std::move(out), [this, edge_vals, incident = std::move(incident),
                                 id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ge = grad_mut(edge_vals);
        const std::size_t f = g.cols();
        for (std::size_t i = 0; i < incident.size(); ++i) {
            if (incident[i].empty()) continue;
            const double inv = 1.0 / static_cast<double>(incident[i].size());
            for (std::size_t e : incident[i])
                for (std::size_t c = 0; c < f; ++c)
                    ge.data[e * f + c] += g.data[i * f + c] * inv;
        }
    });
}

int Tape::edges_to_matrix(int edge_scalars, const std::vector<std::pair<int, int>>& pairs,
                          std::size_t n_nodes, double diag_fill) {
    const Array& ev = value(edge_scalars);
    require(ev.cols() == 1 && ev.rows() == pairs.size(),
            "edges_to_matrix: edge scalars must be n_edges x 1");
    Array out(n_nodes, n_nodes, 0.0);
    for (std::size_t i = 0; i < n_nodes; ++i) out.data[i * n_nodes + i] = diag_fill;
    for (std::size_t e = 0; e < pairs.size(); ++e) {
        const auto [i, j] = pairs[e];
        require(i >= 0 && j >= 0 && static_cast<std::size_t>(i) < n_nodes &&
                    static_cast<std::size_t>(j) < n_nodes && i != j,
                "edges_to_matrix: bad edge pair");
        out.data[static_cast<std::size_t>(i) * n_nodes + static_cast<std::size_t>(j)] = ev.data[e];
    }
    return emit(std::move(out), [this, edge_scalars, pairs, n_nodes,
                                 id = static_cast<int>(nodes_.size())] {
        const Array& g = grad(id);
        Array& ge = grad_mut(edge_scalars);
        for (std::size_t e = 0; e < pairs.size(); ++e)
            ge.data[e] += g.data[static_cast<std::size_t>(pairs[e].first) * n_nodes +
                                 static_cast<std::size_t>(pairs[e].second)];
    });
}

void Tape::backward(int loss) {
    check(loss);
    require(value(loss).numel() == 1, "backward: loss must be scalar");
    grad_mut(loss).data[0] = 1.0;
    for (int id = loss; id >= 0; --id)
        if (nodes_[id].back) nodes_[id].back();
}

}  // namespace flowsg::numkit
