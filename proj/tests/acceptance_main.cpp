#include "plda/tensor.hpp"
int main(){return 0;}
