#include "flowsg/tokenizer/codebook.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "flowsg/errors.hpp"
#include "flowsg/numkit/checkpoint.hpp"

namespace flowsg::tokenizer {

namespace {

double sq_dist(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

int nearest_row(const double* x, const numkit::Array& entries, std::size_t col0,
                std::size_t width) {
    const std::size_t k = entries.shape[0];
    const std::size_t d = entries.shape[1];
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < k; ++r) {
        const double dist = sq_dist(x, entries.data.data() + r * d + col0, width);
        if (dist < best_d) {  // strict: ties keep the lowest index
            best_d = dist;
            best = static_cast<int>(r);
        }
    }
    return best;
}

void check_dims(const std::vector<double>& x, const Codebook& cb) {
    if (cb.k == 0 || cb.d == 0) throw std::invalid_argument("codebook is empty");
    if (x.size() != cb.d) throw std::invalid_argument("feature dim does not match codebook");
}

std::size_t slot_width(const Codebook& cb, int m_slots) {
    if (m_slots <= 0 || cb.d % static_cast<std::size_t>(m_slots) != 0)
        throw std::invalid_argument("slot count must divide the feature dim");
    return cb.d / static_cast<std::size_t>(m_slots);
}

}  // namespace

int quantize(const std::vector<double>& x, const Codebook& cb) {
    check_dims(x, cb);
    return nearest_row(x.data(), cb.entries, 0, cb.d);
}

std::vector<int> tokenize_slots(const std::vector<double>& x, const Codebook& cb, int m_slots) {
    check_dims(x, cb);
    const std::size_t w = slot_width(cb, m_slots);
    std::vector<int> out(static_cast<std::size_t>(m_slots));
    for (int m = 0; m < m_slots; ++m)
        out[static_cast<std::size_t>(m)] =
            nearest_row(x.data() + static_cast<std::size_t>(m) * w, cb.entries,
                        static_cast<std::size_t>(m) * w, w);
    return out;
}

std::vector<double> decode_tokens(const std::vector<int>& tokens, const Codebook& cb) {
    const int m_slots = static_cast<int>(tokens.size());
    const std::size_t w = slot_width(cb, m_slots);
    std::vector<double> out(cb.d);
    for (int m = 0; m < m_slots; ++m) {
        const int tok = tokens[static_cast<std::size_t>(m)];
        if (tok < 0 || static_cast<std::size_t>(tok) >= cb.k)
            throw std::out_of_range("decode_tokens: token outside codebook");
        const std::size_t col0 = static_cast<std::size_t>(m) * w;
        for (std::size_t c = 0; c < w; ++c)
            out[col0 + c] = cb.entries.data[static_cast<std::size_t>(tok) * cb.d + col0 + c];
    }
    return out;
}

Codebook train_vq(const std::vector<std::vector<double>>& features, std::size_t k, int m_slots,
                  const VqTrainOptions& opt, numkit::RngStream& rng, VqTrainReport* report) {
    if (features.empty()) throw DataError("train_vq: empty feature set");
    const std::size_t d = features[0].size();
    for (const auto& f : features)
        if (f.size() != d) throw DataError("train_vq: ragged feature dims");
    if (features.size() < k)
        throw DataError("train_vq: need at least k distinct features (" +
                        std::to_string(features.size()) + " < " + std::to_string(k) + ")");
    if (k == 0 || d == 0) throw std::invalid_argument("train_vq: k and d must be positive");
    if (m_slots <= 0 || d % static_cast<std::size_t>(m_slots) != 0)
        throw std::invalid_argument("train_vq: slot count must divide the feature dim");
    if (opt.epochs < 1 || !(opt.ema_decay >= 0.0 && opt.ema_decay < 1.0))
        throw std::invalid_argument("train_vq: bad epochs or decay");

    Codebook cb;
    cb.k = k;
    cb.d = d;
    cb.entries = numkit::Array(k, d);
    const auto seeds = rng.pick_distinct(features.size(), k);
    for (std::size_t r = 0; r < k; ++r)
        std::copy(features[seeds[r]].begin(), features[seeds[r]].end(),
                  cb.entries.data.begin() + r * d);

    std::vector<int> assign(features.size(), 0);
    std::vector<double> errs(features.size(), 0.0);
    const auto assign_all = [&] {
        double mse = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i) {
            assign[i] = nearest_row(features[i].data(), cb.entries, 0, d);
            errs[i] = sq_dist(features[i].data(),
                              cb.entries.data.data() + static_cast<std::size_t>(assign[i]) * d, d);
            mse += errs[i];
        }
        return mse / (static_cast<double>(features.size()) * static_cast<double>(d));
    };

    std::vector<double> sums(k * d);
    std::vector<std::size_t> counts(k);
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        assign_all();
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < features.size(); ++i) {
            const auto a = static_cast<std::size_t>(assign[i]);
            ++counts[a];
            for (std::size_t c = 0; c < d; ++c) sums[a * d + c] += features[i][c];
        }
        const double step = 1.0 - opt.ema_decay;
        for (std::size_t r = 0; r < k; ++r) {
            if (counts[r] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[r]);
            for (std::size_t c = 0; c < d; ++c) {
                const double mean = sums[r * d + c] * inv;
                cb.entries.data[r * d + c] += step * (mean - cb.entries.data[r * d + c]);
            }
        }
        // Dead entries grab the points the codebook currently serves worst.
        std::vector<std::size_t> order;
        for (std::size_t r = 0; r < k; ++r)
            if (counts[r] == 0) order.push_back(r);
        if (!order.empty()) {
            std::vector<std::size_t> by_err(features.size());
            for (std::size_t i = 0; i < by_err.size(); ++i) by_err[i] = i;
            std::stable_sort(by_err.begin(), by_err.end(), [&](std::size_t a, std::size_t b) {
                return errs[a] > errs[b];
            });
            for (std::size_t q = 0; q < order.size() && q < by_err.size(); ++q) {
                const std::size_t point = by_err[q];
                std::copy(features[point].begin(), features[point].end(),
                          cb.entries.data.begin() + order[q] * d);
                if (report)
                    report->reseeds.push_back({epoch, order[q], point});
            }
        }
        if (report) report->epoch_mse.push_back(assign_all());
    }

    const double final_mse = assign_all();
    if (report) {
        report->final_mse = final_mse;
        std::vector<bool> used(k, false);
        for (int a : assign) used[static_cast<std::size_t>(a)] = true;
        std::size_t n_used = 0;
        for (bool u : used)
            if (u) ++n_used;
        report->utilization = static_cast<double>(n_used) / static_cast<double>(k);
    }
    return cb;
}

double reconstruction_mse(const std::vector<std::vector<double>>& features, const Codebook& cb,
                          int m_slots) {
    if (features.empty()) throw DataError("reconstruction_mse: empty feature set");
    double total = 0.0;
    for (const auto& f : features) {
        const auto rec = decode_tokens(tokenize_slots(f, cb, m_slots), cb);
        total += sq_dist(f.data(), rec.data(), cb.d);
    }
    return total / (static_cast<double>(features.size()) * static_cast<double>(cb.d));
}

double dataset_variance(const std::vector<std::vector<double>>& features) {
    if (features.empty()) throw DataError("dataset_variance: empty feature set");
    const std::size_t d = features[0].size();
    std::vector<double> mean(d, 0.0);
    for (const auto& f : features)
        for (std::size_t c = 0; c < d; ++c) mean[c] += f[c];
    for (double& m : mean) m /= static_cast<double>(features.size());
    double var = 0.0;
    for (const auto& f : features)
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = f[c] - mean[c];
            var += dv * dv;
        }
    return var / (static_cast<double>(features.size()) * static_cast<double>(d));
}

std::vector<std::vector<double>> token_slot_marginals(const std::vector<int>& tokens, int m_slots,
                                                      int k) {
    if (m_slots <= 0 || k <= 0 || tokens.size() % static_cast<std::size_t>(m_slots) != 0)
        throw std::invalid_argument("token_slot_marginals: bad shape");
    const std::size_t rows = tokens.size() / static_cast<std::size_t>(m_slots);
    if (rows == 0) throw DataError("token_slot_marginals: no token rows");
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m_slots),
                                         std::vector<double>(static_cast<std::size_t>(k), 0.0));
    for (std::size_t r = 0; r < rows; ++r)
        for (int m = 0; m < m_slots; ++m) {
            const int tok = tokens[r * static_cast<std::size_t>(m_slots) +
                                   static_cast<std::size_t>(m)];
            if (tok < 0 || tok >= k)
                throw std::invalid_argument("token_slot_marginals: token out of range");
            out[static_cast<std::size_t>(m)][static_cast<std::size_t>(tok)] += 1.0;
        }
    for (auto& row : out)
        for (double& v : row) v /= static_cast<double>(rows);
    return out;
}

void save_codebook(const std::string& path, const Codebook& cb) {
    if (cb.entries.rank() != 2 || cb.entries.rows() != cb.k || cb.entries.cols() != cb.d)
        throw std::invalid_argument("save_codebook: entries shape disagrees with k and d");
    numkit::TensorMap out;
    out.emplace("entries", cb.entries);
    numkit::save_checkpoint(path, out);
}

Codebook load_codebook(const std::string& path) {
    const numkit::TensorMap in = numkit::load_checkpoint(path);
    const auto it = in.find("entries");
    if (it == in.end()) throw DataError("codebook file lacks entries: " + path);
    if (it->second.rank() != 2 || it->second.rows() == 0 || it->second.cols() == 0)
        throw DataError("codebook entries must be a nonempty matrix: " + path);
    Codebook cb;
    cb.k = it->second.rows();
    cb.d = it->second.cols();
    cb.entries = it->second;
    return cb;
}

}  // namespace flowsg::tokenizer
