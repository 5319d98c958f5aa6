import matplotlib

# figures are only ever written to SVG files
matplotlib.use("Agg")
