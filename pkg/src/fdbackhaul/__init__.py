"""Full-duplex self-backhauled small-cell scheduling and power allocation."""
