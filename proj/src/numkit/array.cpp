#include "flowsg/numkit/array.hpp"

#include <stdexcept>

namespace flowsg::numkit {

namespace {
std::size_t product(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}
}  // namespace

Array::Array(std::vector<std::size_t> shape_, double fill)
    : shape(std::move(shape_)), data(product(shape), fill) {}

Array::Array(std::size_t rows, std::size_t cols, double fill)
    : shape{rows, cols}, data(rows * cols, fill) {}

Array Array::scalar(double v) {
    Array a(1, 1);
    a.data[0] = v;
    return a;
}

Array Array::row(std::initializer_list<double> vals) {
    Array a(1, vals.size());
    std::size_t j = 0;
    for (double v : vals) a.data[j++] = v;
    return a;
}

Array Array::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m == 0 ? 0 : rows.begin()->size();
    Array a(m, n);
    std::size_t i = 0;
    for (const auto& r : rows) {
        if (r.size() != n) throw std::invalid_argument("Array::from_rows: ragged rows");
        std::size_t j = 0;
        for (double v : r) a.data[i * n + j++] = v;
        ++i;
    }
    return a;
}

Array Array::from_vector(const std::vector<double>& vals) {
    Array a(vals.size(), 1);
    a.data = vals;
    return a;
}

std::size_t Array::numel() const { return product(shape); }

std::size_t Array::rows() const {
    if (rank() != 2) throw std::invalid_argument("Array::rows: rank-2 required");
    return shape[0];
}

std::size_t Array::cols() const {
    if (rank() != 2) throw std::invalid_argument("Array::cols: rank-2 required");
    return shape[1];
}

double& Array::at(std::size_t i, std::size_t j) {
    if (rank() != 2 || i >= shape[0] || j >= shape[1])
        throw std::out_of_range("Array::at: index outside shape");
    return data[i * shape[1] + j];
}

double Array::at(std::size_t i, std::size_t j) const {
    if (rank() != 2 || i >= shape[0] || j >= shape[1])
        throw std::out_of_range("Array::at: index outside shape");
    return data[i * shape[1] + j];
}

}  // namespace flowsg::numkit
