# quarterly revenue figure
import matplotlib.pyplot as plt
import numpy as np

x = np.arange(4)
top = max(x) + 1
fig, ax = plt.subplots()
ax.scatter(x, x * 2, marker="o", alpha=0.5)
ax.set_xlabel("Quarter")
plt.show()
