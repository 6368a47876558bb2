#include "come/cli.hpp"

int main(int argc, char** argv) { return come::cli::run({argv, argv + argc}); }
