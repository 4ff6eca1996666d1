#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace flowsg::numkit {

// Dense row-major array of doubles. Rank is arbitrary for storage purposes
// (checkpoints), but every tape op works on rank-2 views; scalars are 1x1.
struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Array() = default;
    Array(std::vector<std::size_t> shape_, double fill = 0.0);
    Array(std::size_t rows, std::size_t cols, double fill = 0.0);

    static Array scalar(double v);
    static Array row(std::initializer_list<double> vals);
    static Array from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Array from_vector(const std::vector<double>& vals);  // n x 1 column

    std::size_t numel() const;
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;

    bool same_shape(const Array& other) const { return shape == other.shape; }
};

}  // namespace flowsg::numkit
