"""Task streams, training loops, metrics, verification suites and result I/O."""
