#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowsg/tokenizer/codebook.hpp"

namespace flowsg::tokenizer {

// Predicate phrases with fixed synthetic embeddings standing in for a text
// encoder. Embeddings are unit vectors derived from (seed, phrase hash).
struct PhraseTable {
    std::vector<std::string> phrases;
    numkit::Array embeddings;  // p x d
};

PhraseTable make_phrase_table(const std::vector<std::string>& phrases, std::size_t d,
                              std::uint64_t seed);

// TSV rows: phrase, then d full-precision values.
void save_phrase_table(const std::string& path, const PhraseTable& table);
PhraseTable load_phrase_table(const std::string& path);

struct RelationCodebook {
    Codebook codebook;
    std::vector<std::vector<int>> phrase_tokens;  // slot tuple per phrase
};

RelationCodebook build_relation_codebook(const PhraseTable& table, std::size_t k, int m_slots,
                                         const VqTrainOptions& opt, numkit::RngStream& rng,
                                         VqTrainReport* report = nullptr);

// Checkpoint-backed persistence of the codebook plus its phrase tuples.
void save_relation_codebook(const std::string& path, const RelationCodebook& rel);
RelationCodebook load_relation_codebook(const std::string& path);  // DataError when malformed

// Nearest phrase to the decoded slot tuple, ties to the lowest index.
int nn_decode(const std::vector<int>& tokens, const Codebook& cb, const PhraseTable& table);

// Slot-position marginals implied by phrase marginals through the phrase
// tuples: P(slot m = tok) = sum over phrases with tuple[m] == tok.
std::vector<std::vector<double>> rel_slot_marginals(
    const RelationCodebook& rel, const PhraseTable& table,
    const std::map<std::string, double>& phrase_marginals);

}  // namespace flowsg::tokenizer
