#include "cada/cli.hpp"

int main(int argc, char** argv) { return cada::run(argc, argv); }
