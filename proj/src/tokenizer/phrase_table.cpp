#include "flowsg/tokenizer/phrase_table.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "flowsg/errors.hpp"
#include "flowsg/numkit/checkpoint.hpp"

namespace flowsg::tokenizer {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

PhraseTable make_phrase_table(const std::vector<std::string>& phrases, std::size_t d,
                              std::uint64_t seed) {
    if (phrases.empty() || d == 0)
        throw std::invalid_argument("make_phrase_table: need phrases and a positive dim");
    PhraseTable t;
    t.phrases = phrases;
    t.embeddings = numkit::Array(phrases.size(), d);
    for (std::size_t p = 0; p < phrases.size(); ++p) {
        numkit::RngStream rng(seed, numkit::RngStream::combine(0x9a7a6, fnv1a(phrases[p])));
        double norm = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double v = rng.normal();
            t.embeddings.data[p * d + c] = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < d; ++c) t.embeddings.data[p * d + c] /= norm;
    }
    return t;
}

void save_phrase_table(const std::string& path, const PhraseTable& table) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    const std::size_t d = table.embeddings.cols();
    char buf[40];
    for (std::size_t p = 0; p < table.phrases.size(); ++p) {
        os << table.phrases[p];
        for (std::size_t c = 0; c < d; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", table.embeddings.data[p * d + c]);
            os << '\t' << buf;
        }
        os << '\n';
    }
    if (!os) throw DataError("write failed: " + path);
}

PhraseTable load_phrase_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open phrase table: " + path);
    std::vector<std::string> phrases;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        if (!std::getline(ss, field, '\t'))
            throw DataError(path + ":" + std::to_string(lineno) + ": missing phrase");
        phrases.push_back(field);
        std::vector<double> vals;
        while (std::getline(ss, field, '\t')) {
            char* end = nullptr;
            const double v = std::strtod(field.c_str(), &end);
            if (end == field.c_str())
                throw DataError(path + ":" + std::to_string(lineno) + ": bad number " + field);
            vals.push_back(v);
        }
        if (vals.empty())
            throw DataError(path + ":" + std::to_string(lineno) + ": no embedding values");
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw DataError(path + ": empty phrase table");
    const std::size_t d = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != d) throw DataError(path + ": ragged embedding rows");
    PhraseTable t;
    t.phrases = std::move(phrases);
    t.embeddings = numkit::Array(rows.size(), d);
    for (std::size_t p = 0; p < rows.size(); ++p)
        std::copy(rows[p].begin(), rows[p].end(), t.embeddings.data.begin() + p * d);
    return t;
}

RelationCodebook build_relation_codebook(const PhraseTable& table, std::size_t k, int m_slots,
                                         const VqTrainOptions& opt, numkit::RngStream& rng,
                                         VqTrainReport* report) {
    const std::size_t p = table.phrases.size();
    const std::size_t d = table.embeddings.cols();
    std::vector<std::vector<double>> features(p);
    for (std::size_t i = 0; i < p; ++i)
        features[i].assign(table.embeddings.data.begin() + i * d,
                           table.embeddings.data.begin() + (i + 1) * d);
    RelationCodebook out;
    out.codebook = train_vq(features, k, m_slots, opt, rng, report);
    out.phrase_tokens.resize(p);
    for (std::size_t i = 0; i < p; ++i)
        out.phrase_tokens[i] = tokenize_slots(features[i], out.codebook, m_slots);
    return out;
}

int nn_decode(const std::vector<int>& tokens, const Codebook& cb, const PhraseTable& table) {
    const std::vector<double> rec = decode_tokens(tokens, cb);
    const std::size_t d = table.embeddings.cols();
    if (d != cb.d) throw std::invalid_argument("nn_decode: phrase dim does not match codebook");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < table.phrases.size(); ++p) {
        double dist = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = rec[c] - table.embeddings.data[p * d + c];
            dist += dv * dv;
        }
        if (dist < best_d) {
            best_d = dist;
            best = static_cast<int>(p);
        }
    }
    return best;
}

void save_relation_codebook(const std::string& path, const RelationCodebook& rel) {
    if (rel.phrase_tokens.empty())
        throw std::invalid_argument("save_relation_codebook: no phrase tuples");
    const std::size_t m = rel.phrase_tokens[0].size();
    numkit::Array tuples(rel.phrase_tokens.size(), m);
    for (std::size_t p = 0; p < rel.phrase_tokens.size(); ++p) {
        if (rel.phrase_tokens[p].size() != m)
            throw std::invalid_argument("save_relation_codebook: ragged phrase tuples");
        for (std::size_t s = 0; s < m; ++s)
            tuples.at(p, s) = static_cast<double>(rel.phrase_tokens[p][s]);
    }
    numkit::TensorMap out;
    out.emplace("entries", rel.codebook.entries);
    out.emplace("phrase_tokens", std::move(tuples));
    numkit::save_checkpoint(path, out);
}

RelationCodebook load_relation_codebook(const std::string& path) {
    const numkit::TensorMap in = numkit::load_checkpoint(path);
    const auto entries = in.find("entries");
    const auto tuples = in.find("phrase_tokens");
    if (entries == in.end() || tuples == in.end())
        throw DataError("relation codebook file incomplete: " + path);
    if (entries->second.rank() != 2 || entries->second.rows() == 0)
        throw DataError("relation codebook entries must be a nonempty matrix: " + path);
    RelationCodebook rel;
    rel.codebook.k = entries->second.rows();
    rel.codebook.d = entries->second.cols();
    rel.codebook.entries = entries->second;
    const auto& t = tuples->second;
    if (t.rank() != 2 || t.rows() == 0 || t.cols() == 0)
        throw DataError("relation codebook phrase tuples must be a nonempty matrix: " + path);
    rel.phrase_tokens.assign(t.rows(), std::vector<int>(t.cols()));
    for (std::size_t p = 0; p < t.rows(); ++p)
        for (std::size_t s = 0; s < t.cols(); ++s) {
            const double v = t.at(p, s);
            const int tok = static_cast<int>(v);
            if (static_cast<double>(tok) != v || tok < 0 ||
                static_cast<std::size_t>(tok) >= rel.codebook.k)
                throw DataError("relation codebook phrase tuple entry out of range: " + path);
            rel.phrase_tokens[p][static_cast<std::size_t>(s)] = tok;
        }
    return rel;
}

std::vector<std::vector<double>> rel_slot_marginals(
    const RelationCodebook& rel, const PhraseTable& table,
    const std::map<std::string, double>& phrase_marginals) {
    const int m_slots = rel.phrase_tokens.empty() ? 0
                                                  : static_cast<int>(rel.phrase_tokens[0].size());
    if (m_slots == 0) throw std::invalid_argument("rel_slot_marginals: empty relation codebook");
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m_slots),
                                         std::vector<double>(rel.codebook.k, 0.0));
    double total = 0.0;
    for (std::size_t p = 0; p < table.phrases.size(); ++p) {
        const auto it = phrase_marginals.find(table.phrases[p]);
        const double w = it == phrase_marginals.end() ? 0.0 : it->second;
        total += w;
        for (int m = 0; m < m_slots; ++m)
            out[static_cast<std::size_t>(m)]
               [static_cast<std::size_t>(rel.phrase_tokens[p][static_cast<std::size_t>(m)])] += w;
    }
    if (total <= 0.0) throw DataError("rel_slot_marginals: phrase marginals sum to zero");
    for (auto& row : out)
        for (double& v : row) v /= total;
    return out;
}

}  // namespace flowsg::tokenizer
