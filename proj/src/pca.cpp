#include <cmath>
#include <cstdio>
#include <ostream>

#include <Eigen/Dense>

#include "protoshot/error.hpp"
#include "protoshot/evalharness.hpp"
#include "protoshot/simsel.hpp"

namespace protoshot {

DenseMatrix pca_2d(const DenseMatrix& points) {
    if (points.rows < 2) throw Error(Errc::TooFewPoints, "PCA needs at least 2 rows");
    const auto m = static_cast<Eigen::Index>(points.rows);
    const auto d = static_cast<Eigen::Index>(points.cols);
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMatrix> data(points.values.data(), m, d);

    const Eigen::RowVectorXd mean = data.colwise().mean();
    const Eigen::MatrixXd centered = data.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(m - 1);

    // Eigenvalues come back ascending; the last two columns are the top components.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    const Eigen::Index components = std::min<Eigen::Index>(2, d);
    Eigen::MatrixXd basis(d, 2);
    basis.setZero();
    for (Eigen::Index c = 0; c < components; ++c) {
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - c);
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < d; ++j) {
            if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
        }
        if (v(arg) < 0) v = -v;
        basis.col(c) = v;
    }
    const Eigen::MatrixXd projected = centered * basis;

    DenseMatrix out;
    out.rows = points.rows;
    out.cols = 2;
    out.values.resize(points.rows * 2);
    for (Eigen::Index i = 0; i < m; ++i) {
        out.values[static_cast<std::size_t>(i) * 2] = projected(i, 0);
        out.values[static_cast<std::size_t>(i) * 2 + 1] = projected(i, 1);
    }
    return out;
}

EmbeddingTable embedding_table(std::span<const SlideBag> bags, EmbeddingKind kind,
                               const TextClassifier& classifier, std::size_t top_k) {
    EmbeddingTable table;
    if (bags.empty()) throw Error(Errc::TooFewPoints, "no slides to export");
    table.rows.cols = bags.front().patches.dim();
    for (const auto& bag : bags) {
        if (!bag.label) throw Error(Errc::MissingLabel, "slide " + bag.slide_id + " has no label");
        const auto label = static_cast<std::size_t>(*bag.label);
        if (label >= classifier.num_classes()) {
            throw Error(Errc::IndexOutOfRange, "slide " + bag.slide_id + " label outside the classifier");
        }
        if (bag.patches.dim() != table.rows.cols || classifier.dim() != table.rows.cols) {
            throw Error(Errc::DimensionMismatch, "slide " + bag.slide_id);
        }
        const auto row = kind == EmbeddingKind::Bgap
                             ? bgap(bag.patches)
                             : visionshot_slide_embedding(bag, classifier.canonical(label), top_k);
        table.slide_ids.push_back(bag.slide_id);
        table.labels.push_back(*bag.label);
        table.rows.values.insert(table.rows.values.end(), row.begin(), row.end());
        ++table.rows.rows;
    }
    return table;
}

void write_embedding_csv(const EmbeddingTable& table, const DenseMatrix& projection, std::ostream& sink) {
    if (projection.rows != table.slide_ids.size()) {
        throw Error(Errc::LengthMismatch, "projection rows do not match the table");
    }
    sink << "slide_id,label,pc1,pc2\n";
    char buf[64];
    for (std::size_t i = 0; i < table.slide_ids.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6g,%.6g", projection.row(i)[0], projection.row(i)[1]);
        sink << table.slide_ids[i] << ',' << table.labels[i] << ',' << buf << '\n';
    }
}

}  // namespace protoshot
