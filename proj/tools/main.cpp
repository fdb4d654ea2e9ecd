#include "enspipe/pipeline.hpp"

int main(int argc, char** argv) { return enspipe::cliDispatch(argc, argv); }
