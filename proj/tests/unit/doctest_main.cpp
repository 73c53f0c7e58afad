#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "svq/numerics/runtime.hpp"

int main(int argc, char** argv) {
  svq::tune_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
