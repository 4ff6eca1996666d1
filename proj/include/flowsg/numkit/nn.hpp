#pragma once

#include "flowsg/numkit/tape.hpp"

namespace flowsg::numkit {

struct LinearParams {
    int w = -1;  // (in, out)
    int b = -1;  // (1, out)
};

int linear(Tape& t, int x, const LinearParams& p);

// FiLM: x * (1 + cond W_s + b_s) + (cond W_h + b_h), broadcast over rows.
// With zero-initialised projections this is the identity.
struct FilmParams {
    LinearParams scale;
    LinearParams shift;
};

int film(Tape& t, int x, int cond, const FilmParams& p);

// LayerNorm (no learned affine) followed by FiLM from the conditioning vector.
struct AdalnParams {
    FilmParams mod;
    double eps = 1e-5;
};

int adaln(Tape& t, int x, int cond, const AdalnParams& p);

// Two-layer GELU MLP.
struct MlpParams {
    LinearParams fc1;
    LinearParams fc2;
};

int mlp(Tape& t, int x, const MlpParams& p);

}  // namespace flowsg::numkit
