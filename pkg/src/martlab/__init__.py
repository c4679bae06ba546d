"""Two-parameter martingale Hardy-space laboratory on finite probability spaces."""
