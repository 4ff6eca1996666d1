#include "flowsg/numkit/nn.hpp"

namespace flowsg::numkit {

int linear(Tape& t, int x, const LinearParams& p) {
    return t.add_rowvec(t.matmul(x, p.w), p.b);
}

int film(Tape& t, int x, int cond, const FilmParams& p) {
    const int s = t.add_const(linear(t, cond, p.scale), 1.0);
    const int h = linear(t, cond, p.shift);
    return t.add_rowvec(t.mul_rowvec(x, s), h);
}

int adaln(Tape& t, int x, int cond, const AdalnParams& p) {
    return film(t, t.layer_norm_rows(x, p.eps), cond, p.mod);
}

int mlp(Tape& t, int x, const MlpParams& p) {
    return linear(t, t.gelu(linear(t, x, p.fc1)), p.fc2);
}

}  // namespace flowsg::numkit
