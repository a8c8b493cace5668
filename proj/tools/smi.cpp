#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "smi/cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // The AD tape allocates and frees many small matrices per step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return smi::cli::run_cli(argc, argv, std::cout, std::cerr);
}
