import matplotlib.pyplot as plt

values = [3, 1, 4, 1, 5]
plt.plot(values, color="tab:blue", linewidth=2.0)
plt.title("Sample trend")
plt.savefig("out.png")
