#include <iostream>

#include "app.hpp"
#include "lumenseg/runtime.hpp"

int main(int argc, char** argv) {
  lumenseg::configure_allocator();
  return lumenseg::cli::run(argc, argv, std::cout, std::cerr);
}
