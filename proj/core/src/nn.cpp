#include "deskmt/nn.hpp"

#include "deskmt/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>

namespace deskmt::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

ConstMapMatrix view(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

MapMatrix view(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

void require(bool ok, const char* what) {
    if (!ok) {
        throw ShapeMismatch(what);
    }
}

}  // namespace

Parameter& ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (index_.contains(name)) {
        throw InvalidArgument("duplicate parameter " + name);
    }
    index_[name] = params_.size();
    params_.push_back(Parameter{name, Tensor(rows, cols), Tensor(rows, cols)});
    return params_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
    return params_[index_of(name)];
}

const Parameter& ParameterStore::at(const std::string& name) const {
    return params_[index_of(name)];
}

std::size_t ParameterStore::index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw InvalidArgument("no parameter named " + name);
    }
    return it->second;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) {
        std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
    }
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value.size();
    }
    return n;
}

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, {}});
    return Var{nodes_.size() - 1};
}

Var Graph::parameter(const Tensor& value, Tensor* grad) {
    nodes_.push_back(Node{{}, &value, {}, requires_grad_ ? grad : nullptr, {}});
    return Var{nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external != nullptr ? *n.external : n.value;
}

Tensor& Graph::grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.external_grad != nullptr) {
        return *n.external_grad;
    }
    if (n.grad.size() == 0) {
        const Tensor& val = value(v);
        n.grad = Tensor(val.rows, val.cols);
    }
    return n.grad;
}

Var Graph::push(Tensor value, Backward backward) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, requires_grad_ ? std::move(backward) : Backward{}});
    return Var{nodes_.size() - 1};
}

void Graph::backward(Var root) {
    if (!requires_grad_) {
        throw InvalidArgument("backward on a graph built without gradients");
    }
    require(value(root).size() == 1, "backward root must be a scalar");
    grad(root).data[0] += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        if (nodes_[i].backward && nodes_[i].grad.size() != 0) {
            nodes_[i].backward(*this, Var{i});
        }
    }
}

Var embedding(Graph& g, Var table, std::span<const int> ids, double scale) {
    const Tensor& t = g.value(table);
    Tensor out(ids.size(), t.cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        require(id >= 0 && static_cast<std::size_t>(id) < t.rows, "embedding id out of range");
        const auto src = t.row(static_cast<std::size_t>(id));
        auto dst = out.row(r);
        for (std::size_t c = 0; c < t.cols; ++c) {
            dst[c] = scale * src[c];
        }
    }
    return g.push(std::move(out), [table, saved = std::vector<int>(ids.begin(), ids.end()), scale](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dt = gr.grad(table);
        for (std::size_t r = 0; r < saved.size(); ++r) {
            auto dst = dt.row(static_cast<std::size_t>(saved[r]));
            const auto src = dy.row(r);
            for (std::size_t c = 0; c < dy.cols; ++c) {
                dst[c] += scale * src[c];
            }
        }
    });
}

Var add(Graph& g, Var a, Var b) {
    const Tensor& x = g.value(a);
    const Tensor& y = g.value(b);
    require(x.rows == y.rows && x.cols == y.cols, "add: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] += y.data[i];
    }
    return g.push(std::move(out), [a, b](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        for (Var v : {a, b}) {
            Tensor& d = gr.grad(v);
            for (std::size_t i = 0; i < d.size(); ++i) {
                d.data[i] += dy.data[i];
            }
        }
    });
}

Var linear(Graph& g, Var x, Var w, Var b) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const Tensor& bv = g.value(b);
    require(xv.cols == wv.rows, "linear: input width does not match weight rows");
    require(bv.rows == 1 && bv.cols == wv.cols, "linear: bias shape");
    Tensor out(xv.rows, wv.cols);
    view(out).noalias() = view(xv) * view(wv);
    view(out).rowwise() += view(bv).row(0);
    return g.push(std::move(out), [x, w, b](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        view(gr.grad(x)).noalias() += view(dy) * view(gr.value(w)).transpose();
        view(gr.grad(w)).noalias() += view(gr.value(x)).transpose() * view(dy);
        view(gr.grad(b)).row(0) += view(dy).colwise().sum();
    });
}

Var matmul_nt(Graph& g, Var x, Var w) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    require(xv.cols == wv.cols, "matmul_nt: inner dimension mismatch");
    Tensor out(xv.rows, wv.rows);
    view(out).noalias() = view(xv) * view(wv).transpose();
    return g.push(std::move(out), [x, w](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        view(gr.grad(x)).noalias() += view(dy) * view(gr.value(w));
        view(gr.grad(w)).noalias() += view(dy).transpose() * view(gr.value(x));
    });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = g.value(x);
    const Tensor& gv = g.value(gamma);
    const Tensor& bv = g.value(beta);
    require(gv.rows == 1 && gv.cols == xv.cols && bv.rows == 1 && bv.cols == xv.cols, "layer_norm: affine shape");
    const std::size_t n = xv.rows;
    const std::size_t d = xv.cols;
    auto xhat = std::make_shared<Tensor>(n, d);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    Tensor out(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = xv.row(r);
        double mean = 0.0;
        for (double v : row) {
            mean += v;
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (row[c] - mean) * is;
            (*xhat)(r, c) = h;
            out(r, c) = gv.data[c] * h + bv.data[c];
        }
    }
    return g.push(std::move(out), [x, gamma, beta, xhat, inv_std](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& gv2 = gr.value(gamma);
        Tensor& dx = gr.grad(x);
        Tensor& dg = gr.grad(gamma);
        Tensor& db = gr.grad(beta);
        const std::size_t d2 = dy.cols;
        std::vector<double> dxhat(d2);
        for (std::size_t r = 0; r < dy.rows; ++r) {
            double mean_dxhat = 0.0;
            double mean_dxhat_xhat = 0.0;
            for (std::size_t c = 0; c < d2; ++c) {
                const double h = (*xhat)(r, c);
                dg.data[c] += dy(r, c) * h;
                db.data[c] += dy(r, c);
                dxhat[c] = dy(r, c) * gv2.data[c];
                mean_dxhat += dxhat[c];
                mean_dxhat_xhat += dxhat[c] * h;
            }
            mean_dxhat /= static_cast<double>(d2);
            mean_dxhat_xhat /= static_cast<double>(d2);
            const double is = (*inv_std)[r];
            for (std::size_t c = 0; c < d2; ++c) {
                dx(r, c) += is * (dxhat[c] - mean_dxhat - (*xhat)(r, c) * mean_dxhat_xhat);
            }
        }
    });
}

Var relu(Graph& g, Var x) {
    Tensor out = g.value(x);
    for (double& v : out.data) {
        v = v > 0.0 ? v : 0.0;
    }
    return g.push(std::move(out), [x](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& y = gr.value(self);
        Tensor& dx = gr.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            if (y.data[i] > 0.0) {
                dx.data[i] += dy.data[i];
            }
        }
    });
}

Var dropout(Graph& g, Var x, double p, Rng& rng) {
    if (p <= 0.0) {
        return x;
    }
    const Tensor& xv = g.value(x);
    auto mask = std::make_shared<std::vector<double>>(xv.size());
    const double keep_scale = 1.0 / (1.0 - p);
    Tensor out(xv.rows, xv.cols);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double m = rng.uniform() < p ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out.data[i] = xv.data[i] * m;
    }
    return g.push(std::move(out), [x, mask](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dx = gr.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx.data[i] += dy.data[i] * (*mask)[i];
        }
    });
}

Var attention(Graph& g, Var q, Var k, Var v, const AttentionShape& shape) {
    const Tensor& qv = g.value(q);
    const Tensor& kv = g.value(k);
    const Tensor& vv = g.value(v);
    const std::size_t d = qv.cols;
    require(shape.heads >= 1 && d % shape.heads == 0, "attention: width not divisible by heads");
    require(qv.rows == shape.batch * shape.q_len, "attention: query rows");
    require(kv.cols == d && vv.cols == d && kv.rows == vv.rows, "attention: key/value shape");
    require(kv.rows == shape.batch * shape.k_len || kv.rows == shape.k_len, "attention: key rows");
    require(shape.key_valid.empty() || shape.key_valid.size() == (kv.rows / shape.k_len) * shape.k_len,
            "attention: key mask size");
    const bool shared_kv = kv.rows == shape.k_len && shape.batch != 1;
    const std::size_t dh = d / shape.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<double>>(shape.batch * shape.heads * shape.q_len * shape.k_len, 0.0);
    Tensor out(qv.rows, d);
    std::vector<double> scores(shape.k_len);
    for (std::size_t b = 0; b < shape.batch; ++b) {
        const std::size_t kb = shared_kv ? 0 : b;
        for (std::size_t h = 0; h < shape.heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < shape.q_len; ++i) {
                const double* qrow = &qv.data[(b * shape.q_len + i) * d + off];
                double* prow = &(*probs)[((b * shape.heads + h) * shape.q_len + i) * shape.k_len];
                double max_score = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < shape.k_len; ++j) {
                    const bool valid = (shape.key_valid.empty() || shape.key_valid[kb * shape.k_len + j] != 0) &&
                                       !(shape.causal && j > i);
                    if (!valid) {
                        scores[j] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    const double* krow = &kv.data[(kb * shape.k_len + j) * d + off];
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        s += qrow[c] * krow[c];
                    }
                    scores[j] = s * scale;
                    max_score = std::max(max_score, scores[j]);
                }
                if (max_score == -std::numeric_limits<double>::infinity()) {
                    continue;
                }
                double total = 0.0;
                for (std::size_t j = 0; j < shape.k_len; ++j) {
                    const double e = std::isinf(scores[j]) ? 0.0 : std::exp(scores[j] - max_score);
                    prow[j] = e;
                    total += e;
                }
                double* orow = &out.data[(b * shape.q_len + i) * d + off];
                for (std::size_t j = 0; j < shape.k_len; ++j) {
                    prow[j] /= total;
                    if (prow[j] == 0.0) {
                        continue;
                    }
                    const double* vrow = &vv.data[(kb * shape.k_len + j) * d + off];
                    for (std::size_t c = 0; c < dh; ++c) {
                        orow[c] += prow[j] * vrow[c];
                    }
                }
            }
        }
    }

    return g.push(std::move(out), [q, k, v, shape, probs, shared_kv, dh, scale](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& qv2 = gr.value(q);
        const Tensor& kv2 = gr.value(k);
        const Tensor& vv2 = gr.value(v);
        Tensor& dq = gr.grad(q);
        Tensor& dk = gr.grad(k);
        Tensor& dv = gr.grad(v);
        const std::size_t d2 = qv2.cols;
        std::vector<double> dp(shape.k_len);
        for (std::size_t b = 0; b < shape.batch; ++b) {
            const std::size_t kb = shared_kv ? 0 : b;
            for (std::size_t h = 0; h < shape.heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = 0; i < shape.q_len; ++i) {
                    const std::size_t qr = (b * shape.q_len + i) * d2 + off;
                    const double* prow = &(*probs)[((b * shape.heads + h) * shape.q_len + i) * shape.k_len];
                    const double* dorow = &dy.data[qr];
                    double weighted = 0.0;
                    for (std::size_t j = 0; j < shape.k_len; ++j) {
                        if (prow[j] == 0.0) {
                            dp[j] = 0.0;
                            continue;
                        }
                        const std::size_t kr = (kb * shape.k_len + j) * d2 + off;
                        double s = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) {
                            s += dorow[c] * vv2.data[kr + c];
                            dv.data[kr + c] += prow[j] * dorow[c];
                        }
                        dp[j] = s;
                        weighted += prow[j] * s;
                    }
                    for (std::size_t j = 0; j < shape.k_len; ++j) {
                        if (prow[j] == 0.0) {
                            continue;
                        }
                        const double ds = prow[j] * (dp[j] - weighted) * scale;
                        const std::size_t kr = (kb * shape.k_len + j) * d2 + off;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dq.data[qr + c] += ds * kv2.data[kr + c];
                            dk.data[kr + c] += ds * qv2.data[qr + c];
                        }
                    }
                }
            }
        }
    });
}

Var select_rows(Graph& g, Var x, std::span<const std::size_t> rows) {
    const Tensor& xv = g.value(x);
    Tensor out(rows.size(), xv.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r] < xv.rows, "select_rows: row out of range");
        std::copy_n(&xv.data[rows[r] * xv.cols], xv.cols, &out.data[r * xv.cols]);
    }
    return g.push(std::move(out), [x, saved = std::vector<std::size_t>(rows.begin(), rows.end())](Graph& gr, Var self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dx = gr.grad(x);
        for (std::size_t r = 0; r < saved.size(); ++r) {
            for (std::size_t c = 0; c < dy.cols; ++c) {
                dx(saved[r], c) += dy(r, c);
            }
        }
    });
}

Tensor log_softmax(const Tensor& logits) {
    Tensor out(logits.rows, logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto row = logits.row(r);
        const double m = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) {
            total += std::exp(v - m);
        }
        const double lse = m + std::log(total);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            dst[c] = row[c] - lse;
        }
    }
    return out;
}

Var label_smoothed_nll(Graph& g, Var logits, std::span<const int> targets, double eps, int pad_id) {
    const Tensor& lv = g.value(logits);
    require(lv.rows == targets.size(), "loss: one target per logit row");
    require(lv.cols >= 2, "loss: vocabulary too small");
    const std::size_t vocab = lv.cols;
    const bool pad_in_vocab = pad_id >= 0 && static_cast<std::size_t>(pad_id) < vocab;
    const double smooth_count = static_cast<double>(vocab - (pad_in_vocab ? 1 : 0));
    auto logp = std::make_shared<Tensor>(log_softmax(lv));

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const int t = targets[r];
        if (t == pad_id) {
            continue;
        }
        require(t >= 0 && static_cast<std::size_t>(t) < vocab, "loss: target out of range");
        double smooth = 0.0;
        for (std::size_t c = 0; c < vocab; ++c) {
            if (static_cast<int>(c) != pad_id) {
                smooth -= (*logp)(r, c);
            }
        }
        total += (1.0 - eps) * -(*logp)(r, static_cast<std::size_t>(t)) + eps * smooth / smooth_count;
        ++count;
    }
    Tensor out(1, 1, count > 0 ? total / static_cast<double>(count) : 0.0);
    return g.push(std::move(out), [logits, logp, tgt = std::vector<int>(targets.begin(), targets.end()), eps, pad_id,
                                   count, smooth_count](Graph& gr, Var self) {
        if (count == 0) {
            return;
        }
        const double upstream = gr.grad(self).data[0] / static_cast<double>(count);
        Tensor& dl = gr.grad(logits);
        for (std::size_t r = 0; r < tgt.size(); ++r) {
            if (tgt[r] == pad_id) {
                continue;
            }
            for (std::size_t c = 0; c < dl.cols; ++c) {
                double target_mass = static_cast<int>(c) == pad_id ? 0.0 : eps / smooth_count;
                if (static_cast<int>(c) == tgt[r]) {
                    target_mass += 1.0 - eps;
                }
                dl(r, c) += upstream * (std::exp((*logp)(r, c)) - target_mass);
            }
        }
    });
}

}  // namespace deskmt::nn
