#include "ilsc/estimator.hpp"
#include "ilsc/numerics.hpp"
#include <iostream>
int main() {
    ilsc::CMat a = ilsc::CMat::Identity(4, 4);
    auto e = ilsc::hermitian_eig(a);
    std::cout << e.eigenvalues.transpose() << "\n";
    return 0;
}
