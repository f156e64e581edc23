#include "grimrepr/tensor.hpp"

#include <cstring>
#include <stdexcept>

namespace grimrepr {

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    if (shape_.size() > 2) throw std::invalid_argument("tensor rank > 2: " + shape_string(shape_));
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_.size() > 2) throw std::invalid_argument("tensor rank > 2: " + shape_string(shape_));
    if (data_.size() != shape_size(shape_))
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string(shape_));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
{
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const
{
    if (data_.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

bool Tensor::identical(const Tensor& other) const
{
    return shape_ == other.shape_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

} // namespace grimrepr
