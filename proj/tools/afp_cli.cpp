#include "afp/commands.hpp"
#include "afp/runtime.hpp"

int main(int argc, char** argv) {
  afp::tune_allocator();
  return afp::run_cli(argc, argv);
}
