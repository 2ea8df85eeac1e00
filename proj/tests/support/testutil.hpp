#pragma once

#include <random>
#include <string>
#include <vector>

#include "ebnet/tensor.hpp"

namespace ebtest {

// max_i |a_i - b_i| / max_i |b_i|; 0/0 counts as equal
double rel_linf(const ebnet::Tensor& got, const ebnet::Tensor& want);
double rel_linf(const std::vector<double>& got, const std::vector<double>& want);

double max_abs_diff(const ebnet::Tensor& a, const ebnet::Tensor& b);

bool bit_identical(const ebnet::Tensor& a, const ebnet::Tensor& b);

ebnet::Tensor random_tensor(const std::vector<int>& shape, std::mt19937_64& rng,
                            double lo, double hi);

// unique scratch directory under the build tree; removed contents are the caller's problem
std::string scratch_dir(const std::string& tag);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace ebtest
